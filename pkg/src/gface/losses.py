"""Training objectives: contrastive, prototype classification, adversarial,
confusion-weighted and cluster-compactness terms, plus their weighted sum.

All functions take and return :class:`~gface.numcore.Tensor` values so that
every term is differentiable and can be gradient-checked in isolation.
Probability inputs are rows of a softmax; cross-entropies use the floored log.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, NamedTuple

import numpy as np

from . import numcore as nc
from .numcore import Tensor


@dataclass(frozen=True)
class LossWeights:
    lam: float = 0.35
    lam_a: float = 0.2
    lam_b: float = 0.3
    lam_c: float = 0.2
    alpha: float = 2.0
    beta: float = 0.2
    eps_bal: float = 0.05
    eps_wb: float = 1e-6
    eps_ent: float = 1.0
    tau_u: float = 0.07
    tau_c: float = 0.1
    tau_s: float = 0.1
    tau_t: float = 0.07

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v):
                raise nc.ContractViolation(f"{k} must be finite, got {v}")
            # the three debiasing weights may be switched off (ablation)
            if k in ("lam_a", "lam_b", "lam_c"):
                if v < 0:
                    raise nc.ContractViolation(f"{k} must be >= 0, got {v}")
            elif not v > 0:
                raise nc.ContractViolation(f"{k} must be positive, got {v}")
        if not 0 < self.lam < 1:
            raise nc.ContractViolation(f"lam must lie in (0, 1), got {self.lam}")


@dataclass
class ClassStats:
    """Per-class prediction counts on labeled data: correct and total."""

    correct: np.ndarray
    total: np.ndarray

    @classmethod
    def fresh(cls, K: int) -> ClassStats:
        return cls(np.zeros(K, dtype=np.int64), np.zeros(K, dtype=np.int64))

    @property
    def accuracy(self) -> np.ndarray:
        """``correct / total`` per class, 1.0 for classes not yet seen."""
        seen = self.total > 0
        return np.where(seen, self.correct / np.where(seen, self.total, 1), 1.0)


def _zero() -> Tensor:
    return Tensor(0.0)


def _check_unit_rows(name: str, z: Tensor) -> None:
    norms = np.linalg.norm(z.data, axis=-1)
    dev = np.abs(norms - 1.0).max(initial=0.0)
    if dev > 1e-6:
        raise nc.ContractViolation(f"{name}: inputs must be L2-normalized (max norm deviation {dev:.2e})")


# ---------------------------------------------------------------- representation

def loss_rep_self(z1: Tensor, z2: Tensor, tau_u: float) -> Tensor:
    """InfoNCE between two views: for anchor ``z2[i]`` the positive is ``z1[i]``
    and the denominator runs over every ``z1[k]`` in the batch, ``k = i`` included."""
    z1, z2 = nc.as_tensor(z1), nc.as_tensor(z2)
    if z1.shape != z2.shape or z1.ndim != 2:
        raise nc.ShapeError(f"loss_rep_self: shapes {z1.shape} and {z2.shape} do not conform")
    _check_unit_rows("loss_rep_self", z1)
    _check_unit_rows("loss_rep_self", z2)
    n = z1.shape[0]
    logp = nc.log_softmax(z2 @ z1.T, tau=tau_u)  # row i: anchor z2[i] against all z1[k]
    diag = nc.take(logp, (np.arange(n), np.arange(n)))
    return nc.neg(nc.mean(diag))


class SupConResult(NamedTuple):
    loss: Tensor
    degenerate: bool


_MASKED = -1e30


def loss_rep_sup(z1: Tensor, z2: Tensor, labels, tau_c: float) -> SupConResult:
    """Supervised contrastive loss over both views of the labeled sub-batch.

    Views are pooled into ``2n`` anchors.  For each anchor ``a`` the positives
    ``P(a)`` are the other pooled vectors sharing its label and

        l_a = -1/|P(a)| * sum_{p in P(a)} log( exp(s_ap) / sum_{k != a} exp(s_ak) )

    with ``s = z^T z' / tau_c``; the loss is the mean of ``l_a`` over anchors.
    Fewer than two labeled samples is degenerate and yields 0.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n = labels.size
    if n < 2:
        return SupConResult(_zero(), True)
    z1, z2 = nc.as_tensor(z1), nc.as_tensor(z2)
    _check_unit_rows("loss_rep_sup", z1)
    _check_unit_rows("loss_rep_sup", z2)
    pool = nc.concat([z1, z2], axis=0)
    lab = np.concatenate([labels, labels])
    m = 2 * n
    self_mask = np.eye(m, dtype=bool)
    pos = (lab[:, None] == lab[None, :]) & ~self_mask
    n_pos = pos.sum(axis=1)
    logits = nc.add(pool @ pool.T, np.where(self_mask, _MASKED, 0.0))
    logp = nc.log_softmax(logits, tau=tau_c)
    weights = pos / np.maximum(n_pos, 1)[:, None]
    per_anchor = nc.neg(nc.tsum(nc.mul(logp, weights), axis=1))
    return SupConResult(nc.mean(per_anchor), False)


def loss_rep(l_self, l_sup, lam: float) -> Tensor:
    return nc.add(nc.scale(l_self, 1.0 - lam), nc.scale(l_sup, lam))


# ---------------------------------------------------------------- parametric classifier

def entropy(p: Tensor) -> Tensor:
    return nc.neg(nc.tsum(nc.mul(p, nc.log(p))))


def loss_cls_parts(p_student: Tensor, p_teacher: Tensor, labels, labeled, eps_ent: float
                   ) -> tuple[Tensor, Tensor]:
    """Unsupervised and supervised parts of the prototype-classifier loss.

    ``p_teacher`` (second view, sharper temperature) is detached.  The mean
    prediction entering the entropy bonus averages both views.
    """
    p_student = nc.as_tensor(p_student)
    teacher = nc.detach(p_teacher)
    if p_student.shape != teacher.shape:
        raise nc.ShapeError(f"loss_cls: shapes {p_student.shape} and {teacher.shape} do not conform")
    labeled = np.asarray(labeled, dtype=bool)
    p_bar = nc.mean(nc.scale(nc.add(p_student, teacher), 0.5), axis=0)
    l_u = nc.sub(nc.cross_entropy(p_student, teacher), nc.scale(entropy(p_bar), eps_ent))
    if labeled.any():
        l_s = nc.cross_entropy(nc.take(p_student, np.flatnonzero(labeled)),
                               np.asarray(labels, dtype=np.int64)[labeled])
    else:
        l_s = _zero()
    return l_u, l_s


def loss_cls(p_student: Tensor, p_teacher: Tensor, labels, labeled, lam: float,
             eps_ent: float) -> Tensor:
    l_u, l_s = loss_cls_parts(p_student, p_teacher, labels, labeled, eps_ent)
    return nc.add(nc.scale(l_u, 1.0 - lam), nc.scale(l_s, lam))


# ---------------------------------------------------------------- adversarial

def loss_ad(aux_l: Tensor | None, main_l: Tensor | None, aux_u: Tensor | None,
            pseudo_u: np.ndarray | None, alpha: float) -> Tensor:
    """``alpha * mean CE(aux, main)`` on labeled rows minus ``mean CE(aux, pseudo)`` on unlabeled rows.

    ``main_l`` (main-head probabilities) is detached and used as a soft target;
    ``pseudo_u`` holds one-hot main-head argmax targets.  Empty sides contribute 0.
    """
    total = _zero()
    if aux_l is not None and aux_l.shape[0] > 0:
        agree = nc.cross_entropy(aux_l, nc.detach(main_l))
        total = nc.add(total, nc.scale(agree, alpha))
    if aux_u is not None and aux_u.shape[0] > 0:
        disagree = nc.cross_entropy(aux_u, np.asarray(pseudo_u, dtype=np.float64))
        total = nc.sub(total, disagree)
    return total


# ---------------------------------------------------------------- confusion mining

def bal_weights(labels, stats: ClassStats, e_t: float, eps_bal: float) -> np.ndarray:
    a = stats.accuracy[np.asarray(labels, dtype=np.int64)]
    return (1.0 - e_t) + e_t / (a + eps_bal)


def loss_bal(probs_l: Tensor, labels, stats: ClassStats, e_t: float, eps_bal: float) -> Tensor:
    """Cross-entropy on labeled rows, re-weighted towards classes the model gets wrong."""
    if not 0.0 <= e_t <= 0.1 + 1e-12:
        raise nc.ContractViolation(f"loss_bal: e_t must lie in [0, 0.1], got {e_t}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        return _zero()
    per = nc.cross_entropy(probs_l, labels, reduction="none")
    if e_t == 0.0:
        return nc.mean(per)
    return nc.mean(nc.mul(per, bal_weights(labels, stats, e_t, eps_bal)))


# ---------------------------------------------------------------- cluster compactness

class ClusterParts(NamedTuple):
    within_between: Tensor
    max_min: Tensor


def loss_cluster_parts(feats: Tensor, labels, eps_wb: float) -> ClusterParts:
    feats = nc.as_tensor(feats)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise nc.ContractViolation("loss_cluster: empty labeled batch")
    if feats.shape[0] != labels.size:
        raise nc.ShapeError(f"loss_cluster: {feats.shape[0]} features vs {labels.size} labels")
    classes, inv = np.unique(labels, return_inverse=True)
    C = classes.size
    assign = np.zeros((labels.size, C))
    assign[np.arange(labels.size), inv] = 1.0
    counts = assign.sum(axis=0)
    means = nc.transpose(assign / counts) @ feats  # (C, d)
    g_mean = nc.mean(feats, axis=0, keepdims=True)
    sq = nc.sq_norm(nc.sub(feats, Tensor(assign) @ means), axis=1)  # (n,)
    within = nc.tsum(sq)
    between = nc.tsum(nc.mul(nc.sq_norm(nc.sub(means, g_mean), axis=1), counts))
    l_wb = nc.div(within, nc.add(between, eps_wb))
    spans = []
    for c in range(C):
        members = np.flatnonzero(inv == c)
        if members.size < 2:
            spans.append(_zero())
            continue
        s = nc.take(sq, members)
        spans.append(nc.sub(nc.tmax(s), nc.tmin(s)))
    l_mm = nc.scale(nc.tsum(nc.concat([nc.reshape(s, (1,)) for s in spans])), 1.0 / C)
    return ClusterParts(l_wb, l_mm)


def loss_cluster(feats: Tensor, labels, beta: float, eps_wb: float) -> Tensor:
    """Within/between scatter ratio plus ``beta`` times the mean within-class
    (max - min) squared distance to the class mean."""
    parts = loss_cluster_parts(feats, labels, eps_wb)
    return nc.add(parts.within_between, nc.scale(parts.max_min, beta))


# ---------------------------------------------------------------- total

COMPONENTS = ("rep", "cls", "ad", "bal", "cluster")


def loss_total(components: Mapping[str, Tensor | float], weights: LossWeights, epoch: int,
               warmup: int) -> Tensor:
    """Weighted sum; the cluster term is ignored entirely before ``warmup``."""
    total = nc.add(components["rep"], components["cls"])
    total = nc.add(total, nc.scale(components["ad"], weights.lam_a))
    total = nc.add(total, nc.scale(components["bal"], weights.lam_b))
    if epoch >= warmup:
        total = nc.add(total, nc.scale(components["cluster"], weights.lam_c))
    return nc.as_tensor(total)
