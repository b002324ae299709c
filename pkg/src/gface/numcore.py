"""Dense float64 tensors with reverse-mode differentiation.

Every loss in the package is written against the small operation catalog in
this module.  A :class:`Tensor` that requires a gradient remembers the
operation that produced it and its inputs; :func:`backward` walks that graph
in reverse creation order (a valid topological order, since a node can only
be built from nodes that already exist).

Numerically guarded operations floor their arguments at ``EPS`` (1e-12):
``log`` and the norm in ``l2_normalize``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import erf

EPS = 1e-12

_ids = itertools.count()


class ContractViolation(ValueError):
    """Raised when an operation receives inputs outside its contract."""


class ShapeError(ContractViolation):
    pass


class NonFiniteError(ContractViolation):
    pass


class Tensor:
    """A float64 array plus the bookkeeping needed for backpropagation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "op", "_parents", "_backward", "_id")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 *, _parents: tuple = (), _backward=None, _op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"{_op}: non-finite values in tensor of shape {arr.shape}")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self.op = _op
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self._id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)

    @property
    def T(self) -> Tensor:
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=tuple(parents), _backward=backward, _op=op)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node("add", a.data + b.data, (a, b), back)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("subtract", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node("subtract", a.data - b.data, (a, b), back)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("multiply", a, b)

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node("multiply", a.data * b.data, (a, b), back)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast("divide", a, b)
    if np.any(b.data == 0):
        raise NonFiniteError("divide: zero in denominator")

    def back(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _node("divide", a.data / b.data, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node("negate", -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    return _node("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return _node("matmul", a.data @ b.data, (a, b), back)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _node("transpose", a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {a.shape} as {shape}") from None
    return _node("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def take(a, index) -> Tensor:
    """Basic or fancy indexing; the gradient scatters back with accumulation."""
    a = as_tensor(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    out = a.data[index]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _node("index", out, (a,), back)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ShapeError(f"concatenate: shapes {[t.shape for t in ts]} do not conform") from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node("concatenate", out, ts, back)


# ---------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node("sum", out, (a,), back)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(tsum(a, axis, keepdims), 1.0 / float(n))


def _extremum(op: str, a, axis, pick) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        flat = a.data.reshape(-1)
        idx = int(pick(flat))

        def back(g):
            full = np.zeros(a.data.size)
            full[idx] = g
            return (full.reshape(a.shape),)

        return _node(op, flat[idx], (a,), back)
    idx = pick(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _node(op, out, (a,), back)


def tmax(a, axis=None) -> Tensor:
    """Maximum; the gradient goes to the first maximal entry."""
    return _extremum("max", a, axis, np.argmax)


def tmin(a, axis=None) -> Tensor:
    return _extremum("min", a, axis, np.argmin)


def sq_norm(a, axis=-1) -> Tensor:
    """Squared L2 norm along ``axis`` (all entries when ``axis`` is None)."""
    a = as_tensor(a)
    return tsum(mul(a, a), axis=axis)


# ---------------------------------------------------------------- elementwise

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    """Natural log with the input floored at ``EPS``; zero gradient below the floor."""
    a = as_tensor(a)
    x = a.data
    live = x > EPS
    out = np.log(np.where(live, x, EPS))

    def back(g):
        return (np.where(live, g / np.where(live, x, 1.0), 0.0),)

    return _node("log", out, (a,), back)


def relu(a) -> Tensor:
    a = as_tensor(a)
    live = a.data > 0
    return _node("relu", np.where(live, a.data, 0.0), (a,), lambda g: (g * live,))


_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a) -> Tensor:
    """Exact (erf-based) GeLU."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def back(g):
        return (g * (cdf + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)),)

    return _node("gelu", x * cdf, (a,), back)


def dropout(a, rate: float, seed: int, training: bool) -> Tensor:
    """Inverted dropout with an explicit seed; identity when not training."""
    a = as_tensor(a)
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout: rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return a
    keep = np.random.default_rng(seed).random(a.shape) >= rate
    m = keep / (1.0 - rate)
    return _node("dropout", a.data * m, (a,), lambda g: (g * m,))


def detach(a) -> Tensor:
    a = as_tensor(a)
    return Tensor(a.data, requires_grad=False, _op="detach")


def grad_reverse(a, mu: float = 1.0) -> Tensor:
    """Identity forward; multiplies the incoming gradient by ``-mu`` on the way back."""
    if not mu > 0:
        raise ContractViolation(f"grad_reverse: mu must be positive, got {mu}")
    a = as_tensor(a)
    mu = float(mu)
    return _node("grad_reverse", a.data, (a,), lambda g: (-mu * g,))


# ---------------------------------------------------------------- vector ops

def l2_normalize(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    # rescale by the row max first so huge finite rows do not overflow
    m = np.abs(a.data).max(axis=axis, keepdims=True)
    m = np.where(m > 0, m, 1.0)
    norm = m * np.sqrt(((a.data / m) ** 2).sum(axis=axis, keepdims=True))
    live = norm > EPS
    n = np.where(live, norm, EPS)
    y = a.data / n

    def back(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(live, g - y * proj, g) / n,)

    return _node("l2_normalize", y, (a,), back)


def cosine_similarity(a, b) -> Tensor:
    """Pairwise cosine similarities between the rows of ``a`` (n, d) and ``b`` (m, d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine_similarity: shapes {a.shape} and {b.shape} do not conform")
    return matmul(l2_normalize(a), transpose(l2_normalize(b)))


def softmax(a, tau: float = 1.0, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not tau > 0:
        raise ContractViolation(f"softmax: temperature must be positive, got {tau}")
    z = a.data / tau
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)) / tau,)

    return _node("softmax", y, (a,), back)


def log_softmax(a, tau: float = 1.0, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    if not tau > 0:
        raise ContractViolation(f"log_softmax: temperature must be positive, got {tau}")
    z = a.data / tau
    z = z - z.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    y = np.exp(out)

    def back(g):
        return ((g - y * g.sum(axis=axis, keepdims=True)) / tau,)

    return _node("log_softmax", out, (a,), back)


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.intp)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def cross_entropy(probs, target, reduction: str = "mean") -> Tensor:
    """Cross-entropy of probability rows against soft or integer targets.

    ``target`` is either an integer label array (one-hot targets) or an array /
    Tensor of the same shape as ``probs``.  Uses the floored ``log``.
    """
    probs = as_tensor(probs)
    if probs.ndim == 1:
        probs = reshape(probs, (1, -1))
    if isinstance(target, Tensor):
        t = target
    else:
        arr = np.asarray(target)
        if np.issubdtype(arr.dtype, np.integer):
            arr = one_hot(arr.reshape(-1), probs.shape[1])
        t = Tensor(arr.reshape(-1, probs.shape[1]) if arr.ndim == 1 else arr)
    if t.shape != probs.shape:
        raise ShapeError(f"cross_entropy: shapes {probs.shape} and {t.shape} do not conform")
    per = neg(tsum(mul(t, log(probs)), axis=-1))
    if reduction == "none":
        return per
    if reduction == "sum":
        return tsum(per)
    return mean(per)


# ---------------------------------------------------------------- backprop

def _ancestors(root: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if t._id in seen or not t.requires_grad:
            continue
        seen[t._id] = t
        stack.extend(t._parents)
    return sorted(seen.values(), key=lambda t: t._id, reverse=True)


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Backpropagate from a scalar ``root``.

    Gradients are accumulated into ``.grad`` of every leaf that requires one;
    the returned map holds this call's contribution per leaf.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    grads: dict[int, np.ndarray] = {root._id: np.ones_like(root.data)}
    result: dict[Tensor, np.ndarray] = {}
    for node in _ancestors(root):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            result[node] = g
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent._id)
            grads[parent._id] = pg if prev is None else prev + pg
    return result


class TraceNode(NamedTuple):
    node_id: int
    op: str
    inputs: tuple[int, ...]
    value: np.ndarray


def trace(root: Tensor) -> list[TraceNode]:
    """The differentiable sub-graph below ``root`` in creation (topological) order."""
    nodes = reversed(_ancestors(root))
    return [TraceNode(t._id, t.op, tuple(p._id for p in t._parents), t.data) for t in nodes]


# ---------------------------------------------------------------- grad check

@dataclass
class ParamCheck:
    name: str
    max_rel_dev: float
    status: str  # "pass", "fail" or "inconclusive"


@dataclass
class GradCheckReport:
    params: list[ParamCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(p.status == "pass" for p in self.params)

    @property
    def max_rel_dev(self) -> float:
        return max((p.max_rel_dev for p in self.params), default=0.0)

    def __str__(self) -> str:
        return "\n".join(f"{p.name:>24s}  {p.max_rel_dev:.3e}  {p.status}" for p in self.params)


def numeric_grad(fn: Callable[[dict[str, Tensor]], Tensor], params: Mapping[str, np.ndarray],
                 name: str, h: float = 1e-5) -> np.ndarray:
    """Central differences of ``fn`` with respect to ``params[name]``."""
    base = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    x = base[name]
    out = np.empty_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + h
        fp = fn({k: Tensor(v) for k, v in base.items()}).item()
        x[i] = orig - h
        fm = fn({k: Tensor(v) for k, v in base.items()}).item()
        x[i] = orig
        out[i] = (fp - fm) / (2 * h)
    return out


def finite_diff_check(fn: Callable[[dict[str, Tensor]], Tensor], params: Mapping[str, np.ndarray],
                      h: float = 1e-5, tol: float = 1e-4,
                      analytic: Mapping[str, np.ndarray] | None = None,
                      names: Iterable[str] | None = None) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    The deviation of a parameter block is ``max|a - n| / max(max|a|, max|n|, 1e-6)``,
    i.e. relative to the block's largest gradient entry, with an absolute floor
    so that identically-zero blocks are not failed on round-off.
    """
    if not h > 0:
        raise ContractViolation(f"finite_diff_check: h must be positive, got {h}")
    if analytic is None:
        leaves = {k: Tensor(v, requires_grad=True, name=k) for k, v in params.items()}
        out = fn(leaves)
        backward(out)
        analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                    for k, t in leaves.items()}
    report = GradCheckReport()
    for name in (names if names is not None else params.keys()):
        try:
            num = numeric_grad(fn, params, name, h)
        except NonFiniteError:
            report.params.append(ParamCheck(name, float("nan"), "inconclusive"))
            continue
        if not np.isfinite(num).all():
            report.params.append(ParamCheck(name, float("nan"), "inconclusive"))
            continue
        a = np.asarray(analytic[name], dtype=np.float64)
        denom = max(np.abs(a).max(initial=0.0), np.abs(num).max(initial=0.0), 1e-6)
        dev = float(np.abs(a - num).max(initial=0.0) / denom)
        report.params.append(ParamCheck(name, dev, "pass" if dev <= tol else "fail"))
    return report
