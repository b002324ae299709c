"""Empirical checks of the implicit-bias bound.

The discrepancy between two predictors on a point is the Euclidean distance
between their probability vectors; on a dataset it is the mean of those
distances.  With these definitions the new-class discrepancy on unlabeled
data is bounded by labeled-data quantities, the F-discrepancy of a
hypothesis family and a constant fixed by a reference model.  Everything
here runs on plain arrays; nothing is differentiated.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, fields
from typing import Callable, Sequence

import numpy as np

from .model import ModelParams, predict

STOCHASTIC_TOL = 1e-9


class BoundViolation(AssertionError):
    pass


def _check_stochastic(p: np.ndarray, what: str) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim == 1:
        p = p[None]
    if (p < -STOCHASTIC_TOL).any() or np.abs(p.sum(axis=-1) - 1.0).max() > STOCHASTIC_TOL:
        raise ValueError(f"{what}: rows must be probability vectors")
    return p


class Hypothesis:
    """A predictor mapping inputs (n, d) to probability rows (n, K)."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], id: str):
        self.fn = fn
        self.id = id

    def __call__(self, x) -> np.ndarray:
        return _check_stochastic(self.fn(np.asarray(x, dtype=np.float64)), self.id)

    def __repr__(self) -> str:
        return f"Hypothesis({self.id!r})"

    @classmethod
    def from_params(cls, params: ModelParams, tau: float = 0.1, id: str = "H",
                    assignment: np.ndarray | None = None) -> Hypothesis:
        """Main head of a model.  ``assignment[cluster] = class`` relabels output columns."""
        if assignment is None:
            return cls(lambda x: predict(params, x, tau), id)
        inverse = np.argsort(np.asarray(assignment))
        return cls(lambda x: predict(params, x, tau)[:, inverse], id)


def xi_pointwise(p, q) -> float:
    """Euclidean distance between two probability vectors."""
    p = _check_stochastic(p, "xi_pointwise")
    q = _check_stochastic(q, "xi_pointwise")
    return float(np.linalg.norm(p[0] - q[0]))


def xi_rows(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    return np.linalg.norm(np.asarray(P) - np.asarray(Q), axis=-1)


def _probs(h, x, K: int | None = None) -> np.ndarray:
    if isinstance(h, Hypothesis):
        return h(x)
    labels = np.asarray(h, dtype=np.int64).reshape(-1)
    K = K if K is not None else int(labels.max()) + 1
    out = np.zeros((labels.size, K))
    out[np.arange(labels.size), labels] = 1.0
    return out


def xi_dataset(A, B, x) -> float:
    """Mean pointwise discrepancy between ``A`` and ``B`` on the rows of ``x``.

    ``A`` and ``B`` are hypotheses or integer label arrays (one-hot targets).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("xi_dataset: empty dataset")
    pa = _probs(A, x) if isinstance(A, Hypothesis) else None
    pb = _probs(B, x) if isinstance(B, Hypothesis) else None
    K = (pa if pa is not None else pb).shape[1] if (pa is not None or pb is not None) else None
    if pa is None:
        pa = _probs(A, x, K)
    if pb is None:
        pb = _probs(B, x, pa.shape[1])
    return float(xi_rows(pa, pb).mean())


@dataclass(frozen=True)
class Decomposition:
    xi_u: float
    xi_old: float
    xi_new: float
    theta: float
    residual: float


def decompose_check(H, labels_u, x_u, is_old) -> Decomposition:
    """Split the unlabeled discrepancy into old- and new-class parts, weighted by theta."""
    x_u = np.asarray(x_u, dtype=np.float64)
    is_old = np.asarray(is_old, dtype=bool)
    p = _probs(H, x_u)
    d = xi_rows(p, _probs(np.asarray(labels_u), x_u, p.shape[1]))
    xi_u = float(d.mean())
    theta = float(is_old.mean())
    xi_old = float(d[is_old].mean()) if is_old.any() else 0.0
    xi_new = float(d[~is_old].mean()) if (~is_old).any() else 0.0
    residual = abs(xi_u - ((1.0 - theta) * xi_new + theta * xi_old))
    return Decomposition(xi_u, xi_old, xi_new, theta, residual)


def _pair_discrepancies(preds_l: list[np.ndarray], preds_u: list[np.ndarray], alpha: float
                        ) -> np.ndarray:
    n = len(preds_l)
    out = np.zeros((n, n))
    for i, j in itertools.product(range(n), repeat=2):
        out[i, j] = abs(xi_rows(preds_u[i], preds_u[j]).mean()
                        - alpha * xi_rows(preds_l[i], preds_l[j]).mean())
    return out


def f_discrepancy(family: Sequence[Hypothesis], x_l, x_u, alpha: float) -> float:
    """Max over ordered pairs of ``|xi_U(A, B) - alpha * xi_L(A, B)|`` within the family."""
    if len(family) < 1:
        raise ValueError("f_discrepancy: empty hypothesis family")
    preds_l = [h(x_l) for h in family]
    preds_u = [h(x_u) for h in family]
    return float(_pair_discrepancies(preds_l, preds_u, alpha).max())


# ---------------------------------------------------------------- bound

@dataclass(frozen=True)
class BoundReport:
    xi_L: float
    xi_U: float
    xi_U_old: float
    xi_U_new: float
    theta: float
    alpha: float
    delta: float
    lambda_const: float
    lhs: float
    rhs: float
    assumption_holds: bool
    assumption_upper_holds: bool
    coefficient_positive: bool
    margin: float

    @property
    def checked(self) -> bool:
        """Whether the inequality is asserted for this instance."""
        return self.assumption_holds and self.coefficient_positive and self.theta < 1

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 1e-12 * max(1.0, abs(self.rhs))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_text(self) -> str:
        lines = [f"{k}: {v}" for k, v in self.as_dict().items()]
        status = "holds" if self.holds else "VIOLATED"
        if not self.checked:
            why = []
            if not self.assumption_holds:
                why.append("labeled discrepancy exceeds old-class unlabeled discrepancy")
            if not self.coefficient_positive:
                why.append("coefficient nonpositive (alpha <= theta)")
            if self.theta >= 1:
                why.append("no new-class samples")
            status += " (not asserted: " + "; ".join(why) + ")"
        lines.append(f"bound: {status}")
        return "\n".join(lines) + "\n"

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = self.as_dict()
        if header:
            w.writerow(list(d) + ["checked", "holds"])
        w.writerow(list(d.values()) + [self.checked, self.holds])
        return buf.getvalue()


def new_class_bound(H: Hypothesis, H_star: Hypothesis, family: Sequence[Hypothesis], dataset,
                    alpha: float, strict: bool = True) -> BoundReport:
    """Evaluate both sides of the new-class bound on a dataset with full ground truth.

    The inequality is asserted (``BoundViolation`` when ``strict``) only when
    the labeled discrepancy does not exceed the old-class unlabeled one and
    ``alpha > theta``; otherwise the report just flags the failed condition.
    """
    if not any(h is H for h in family) or not any(h is H_star for h in family):
        raise ValueError("new_class_bound: the family must contain both H and H_star")
    x_l = dataset.features[dataset.labeled]
    y_l = dataset.classes[dataset.labeled]
    x_u, y_u = dataset.unlabeled_truth()
    is_old = np.isin(y_u, dataset.old_classes)
    K = dataset.K

    p_l, p_u = H(x_l), H(x_u)
    xi_l = float(xi_rows(p_l, _probs(y_l, x_l, K)).mean())
    dec = decompose_check(H, y_u, x_u, is_old)
    theta = dec.theta
    delta = f_discrepancy(family, x_l, x_u, alpha)
    lam = (alpha * float(xi_rows(H_star(x_l), _probs(y_l, x_l, K)).mean())
           + float(xi_rows(H_star(x_u), _probs(y_u, x_u, K)).mean()))
    rhs = ((alpha - theta) * xi_l + delta + lam) / (1.0 - theta) if theta < 1 else float("inf")
    report = BoundReport(
        xi_L=xi_l, xi_U=dec.xi_u, xi_U_old=dec.xi_old, xi_U_new=dec.xi_new, theta=theta,
        alpha=alpha, delta=delta, lambda_const=lam, lhs=dec.xi_new, rhs=rhs,
        assumption_holds=xi_l <= dec.xi_old,
        assumption_upper_holds=dec.xi_old <= dec.xi_u,
        coefficient_positive=alpha > theta,
        margin=rhs - dec.xi_new,
    )
    if strict and report.checked and not report.holds:
        raise BoundViolation(f"bound violated: lhs {report.lhs} > rhs {report.rhs}")
    return report


def perturbed_family(params: ModelParams, n_perturb: int, seed: int = 0, scale: float = 0.1,
                     tau: float = 0.1, assignment: np.ndarray | None = None) -> list[Hypothesis]:
    """Copies of a model with Gaussian weight noise of ``scale`` times each block's RMS."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_perturb):
        p = params.copy()
        for k, a in p.arrays.items():
            rms = float(np.sqrt(np.mean(a * a)))
            a += scale * rms * rng.normal(size=a.shape)
        out.append(Hypothesis.from_params(p, tau, f"H~{i}", assignment))
    return out


# ---------------------------------------------------------------- metric axioms

@dataclass(frozen=True)
class MetricReport:
    trials: int
    nonnegativity_violations: int
    symmetry_violations: int
    triangle_violations: int
    max_triangle_excess: float

    @property
    def violations(self) -> int:
        return self.nonnegativity_violations + self.symmetry_violations + self.triangle_violations


def _random_simplex(rng: np.random.Generator, K: int) -> np.ndarray:
    # mix in vertices and sparse points so the sweep also covers the simplex boundary
    kind = rng.integers(3)
    if kind == 0:
        return rng.dirichlet(np.ones(K))
    if kind == 1:
        return np.eye(K)[rng.integers(K)]
    return rng.dirichlet(np.full(K, 0.2))


def metric_properties_test(seed: int, trials: int,
                           metric: Callable[[np.ndarray, np.ndarray], float] | None = None,
                           k_range: tuple[int, int] = (2, 8), tol: float = 1e-9) -> MetricReport:
    """Randomised check of non-negativity, symmetry and the triangle inequality."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    metric = metric or (lambda p, q: float(np.linalg.norm(p - q)))
    rng = np.random.default_rng(seed)
    neg = sym = tri = 0
    worst = -np.inf
    for _ in range(trials):
        K = int(rng.integers(k_range[0], k_range[1] + 1))
        p, q, r = (_random_simplex(rng, K) for _ in range(3))
        pq, qp, pr, qr = metric(p, q), metric(q, p), metric(p, r), metric(q, r)
        neg += min(pq, pr, qr) < -tol
        sym += abs(pq - qp) > tol
        excess = pr - (pq + qr)
        worst = max(worst, excess)
        tri += excess > tol
    return MetricReport(trials, int(neg), int(sym), int(tri), float(worst))


def squared_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Not a metric (fails the triangle inequality); the negative control."""
    return float(np.sum((p - q) ** 2))


# ---------------------------------------------------------------- end to end

def bound_check(params: ModelParams, dataset, config, alpha: float = 2.0, n_perturb: int = 8,
                reference_epochs: int = 30, scale: float = 0.1, tau: float = 0.1,
                align: bool = True, strict: bool = False,
                reference: ModelParams | None = None) -> BoundReport:
    """Train the fully supervised reference, build ``{H, H*} + perturbations`` and check.

    With ``align`` the trained model's output columns are relabelled by the
    Hungarian cluster-to-class assignment on the unlabeled part, so that its
    discovered clusters are compared with the right ground-truth classes.
    """
    from dataclasses import replace

    from .evaluation import evaluate_model
    from .train import train_reference

    if not dataset.has_ground_truth:
        raise ValueError("bound_check needs ground truth for the unlabeled part")
    if reference is None:
        reference = train_reference(dataset, replace(config, epochs=reference_epochs,
                                                     warmup=min(config.warmup, reference_epochs)))
    assignment = evaluate_model(params, dataset, tau).assignment if align else None
    H = Hypothesis.from_params(params, tau, "H", assignment)
    H_star = Hypothesis.from_params(reference, tau, "H*")
    family = [H, H_star] + perturbed_family(params, n_perturb, config.seed, scale, tau, assignment)
    return new_class_bound(H, H_star, family, dataset, alpha, strict=strict)
