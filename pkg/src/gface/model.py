"""Feature extractor, projector, cosine prototype head and adversarial auxiliary head.

Parameters live in :class:`ModelParams` as plain arrays.  Forward functions
accept either a ``ModelParams`` (evaluated as constants) or a mapping from
parameter name to :class:`~gface.numcore.Tensor`, which is how the trainer
obtains gradients.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple

import numpy as np

from . import numcore as nc
from .numcore import Tensor

MAGIC = b"GFCK"
VERSION = 1

PARAM_NAMES = ("ext_w1", "ext_b1", "ext_w2", "ext_b2", "proj_w", "proj_b", "prototypes",
               "aux_w1", "aux_b1", "aux_w2", "aux_b2")


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class Dims:
    d: int
    K: int
    d_f: int = 64
    d_b: int = 32
    d_h: int = 128

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "ext_w1": (self.d, self.d_f), "ext_b1": (self.d_f,),
            "ext_w2": (self.d_f, self.d_f), "ext_b2": (self.d_f,),
            "proj_w": (self.d_f, self.d_b), "proj_b": (self.d_b,),
            "prototypes": (self.K, self.d_f),
            "aux_w1": (self.d_f, self.d_h), "aux_b1": (self.d_h,),
            "aux_w2": (self.d_h, self.K), "aux_b2": (self.K,),
        }


@dataclass
class ModelParams:
    dims: Dims
    arrays: dict[str, np.ndarray]

    def __post_init__(self):
        shapes = self.dims.shapes()
        if tuple(self.arrays) != PARAM_NAMES:
            self.arrays = {k: self.arrays[k] for k in PARAM_NAMES}
        for k, shape in shapes.items():
            a = np.asarray(self.arrays[k], dtype=np.float64)
            if a.shape != shape:
                raise nc.ShapeError(f"{k}: expected shape {shape}, got {a.shape}")
            if not np.isfinite(a).all():
                raise nc.NonFiniteError(f"{k}: non-finite parameter values")
            self.arrays[k] = a

    @property
    def K(self) -> int:
        return self.dims.K

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def copy(self) -> ModelParams:
        return ModelParams(self.dims, {k: v.copy() for k, v in self.arrays.items()})

    def leaves(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in self.arrays.items()}

    def equal(self, other: ModelParams) -> bool:
        """Bitwise equality of dimensions and every parameter block."""
        return self.dims == other.dims and all(
            self.arrays[k].tobytes() == other.arrays[k].tobytes() for k in PARAM_NAMES)


def init_model(d: int, d_f: int, d_b: int, d_h: int, K: int, seed: int) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases; unit-norm Gaussian prototypes."""
    dims = Dims(d=d, K=K, d_f=d_f, d_b=d_b, d_h=d_h)
    if min(d, d_f, d_b, d_h, K) < 1:
        raise nc.ContractViolation(f"all dimensions must be >= 1, got {dims}")
    rng = np.random.default_rng(seed)
    fan_in = {"ext_w1": d, "ext_b1": d, "ext_w2": d_f, "ext_b2": d_f, "proj_w": d_f,
              "proj_b": d_f, "aux_w1": d_f, "aux_b1": d_f, "aux_w2": d_h, "aux_b2": d_h}
    arrays = {}
    for name, shape in dims.shapes().items():
        if name == "prototypes":
            t = rng.normal(size=shape)
            arrays[name] = t / np.linalg.norm(t, axis=1, keepdims=True)
        else:
            bound = 1.0 / math.sqrt(fan_in[name])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(dims, arrays)


def _p(params) -> Mapping[str, Tensor]:
    if isinstance(params, ModelParams):
        return params.leaves(requires_grad=False)
    return params


def _rows(x) -> Tensor:
    x = nc.as_tensor(x)
    return nc.reshape(x, (1, -1)) if x.ndim == 1 else x


def extract(params, x) -> Tensor:
    """Two-layer GeLU map from inputs (n, d) to features (n, d_f)."""
    P = _p(params)
    x = _rows(x)
    if x.shape[1] != P["ext_w1"].shape[0]:
        raise nc.ShapeError(f"extract: input dimension {x.shape[1]} != {P['ext_w1'].shape[0]}")
    h = nc.gelu(x @ P["ext_w1"] + P["ext_b1"])
    return h @ P["ext_w2"] + P["ext_b2"]


def project(params, z) -> Tensor:
    """Bottleneck projection followed by L2 normalization (contrastive space)."""
    P = _p(params)
    z = _rows(z)
    if z.shape[1] != P["proj_w"].shape[0]:
        raise nc.ShapeError(f"project: feature dimension {z.shape[1]} != {P['proj_w'].shape[0]}")
    return nc.l2_normalize(z @ P["proj_w"] + P["proj_b"])


class HeadOutput(NamedTuple):
    logits: Tensor
    probs: Tensor


def main_logits(params, z, tau: float) -> HeadOutput:
    """Cosine similarity to every prototype divided by ``tau``, then softmax."""
    if not tau > 0:
        raise nc.ContractViolation(f"main_logits: tau must be positive, got {tau}")
    P = _p(params)
    logits = nc.scale(nc.cosine_similarity(_rows(z), P["prototypes"]), 1.0 / tau)
    return HeadOutput(logits, nc.softmax(logits))


def aux_logits(params, z, mu: float = 1.0, training: bool = False, seed: int = 0,
               dropout: float = 0.1, reverse: bool = True) -> HeadOutput:
    """Auxiliary head behind gradient reversal: Linear, GeLU, dropout, Linear.

    ``reverse=False`` drops the reversal layer; it exists to compare gradients.
    """
    P = _p(params)
    z = _rows(z)
    h = nc.grad_reverse(z, mu) if reverse else z
    h = nc.l2_normalize(h)
    h = nc.gelu(h @ P["aux_w1"] + P["aux_b1"])
    h = nc.dropout(h, dropout, seed, training)
    logits = h @ P["aux_w2"] + P["aux_b2"]
    return HeadOutput(logits, nc.softmax(logits))


def pseudo_labels(probs) -> np.ndarray:
    """Detached one-hot argmax targets; ties go to the lowest class index."""
    p = probs.data if isinstance(probs, Tensor) else np.asarray(probs, dtype=np.float64)
    p = p.reshape(-1, p.shape[-1])
    return nc.one_hot(np.argmax(p, axis=1), p.shape[1])


def predict(params, x, tau: float = 0.1) -> np.ndarray:
    """Main-head probabilities for raw inputs, as a plain array."""
    return main_logits(params, extract(params, x), tau).probs.data


# ---------------------------------------------------------------- checkpoints

def dumps_checkpoint(params: ModelParams) -> bytes:
    d = params.dims
    out = [MAGIC, struct.pack("<I", VERSION), struct.pack("<5I", d.K, d.d, d.d_f, d.d_b, d.d_h)]
    for name in PARAM_NAMES:
        a = params.arrays[name]
        out.append(struct.pack("<Q", a.size))
        out.append(a.astype("<f8").tobytes())
    return b"".join(out)


def loads_checkpoint(blob: bytes) -> ModelParams:
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError("not a checkpoint: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {VERSION})")
    if len(blob) < 28:
        raise CheckpointError("truncated checkpoint header")
    K, d, d_f, d_b, d_h = struct.unpack_from("<5I", blob, 8)
    dims = Dims(d=d, K=K, d_f=d_f, d_b=d_b, d_h=d_h)
    pos = 28
    arrays = {}
    for name, shape in dims.shapes().items():
        if pos + 8 > len(blob):
            raise CheckpointError(f"truncated checkpoint at block {name}")
        (n,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        if n != int(np.prod(shape)):
            raise CheckpointError(f"block {name}: length {n} does not match shape {shape}")
        end = pos + 8 * n
        if end > len(blob):
            raise CheckpointError(f"truncated checkpoint at block {name}")
        arrays[name] = np.frombuffer(blob[pos:end], dtype="<f8").astype(np.float64).reshape(shape)
        pos = end
    if pos != len(blob):
        raise CheckpointError(f"{len(blob) - pos} trailing bytes after last block")
    return ModelParams(dims, arrays)


def save_checkpoint(params: ModelParams, path) -> None:
    from .data import atomic_write
    atomic_write(path, dumps_checkpoint(params))


def load_checkpoint(path) -> ModelParams:
    return loads_checkpoint(Path(path).read_bytes())
