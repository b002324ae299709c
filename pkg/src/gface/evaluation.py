"""Cluster-accuracy evaluation under optimal cluster-to-class matching, and k-means."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np


class EvaluationError(ValueError):
    pass


def hungarian(cost) -> tuple[np.ndarray, float]:
    """Minimum-cost perfect assignment of a square matrix, O(n^3).

    Shortest augmenting paths with row/column potentials.  Returns
    ``(assignment, total)`` where ``assignment[i]`` is the column given to row ``i``.
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
        raise EvaluationError(f"hungarian: need a non-empty square matrix, got shape {c.shape}")
    if not np.isfinite(c).all():
        raise EvaluationError("hungarian: cost matrix has non-finite entries")
    n = c.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.intp)  # owner[j]: row (1-based) holding column j
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    assignment = np.empty(n, dtype=np.intp)
    assignment[owner[1:] - 1] = np.arange(n)
    return assignment, float(c[np.arange(n), assignment].sum())


@dataclass
class AccReport:
    acc_all: float
    acc_old: float
    acc_new: float
    assignment: np.ndarray  # cluster id -> class id
    n_all: int
    n_old: int
    n_new: int
    confusion: np.ndarray = field(repr=False)  # rows: cluster, cols: class

    FIELDS = ("acc_all", "acc_old", "acc_new", "n_all", "n_old", "n_new")

    def as_dict(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.FIELDS}

    def to_text(self, label: str = "model") -> str:
        lines = [f"source: {label}"] + [f"{k}: {getattr(self, k)}" for k in self.FIELDS]
        lines.append("assignment: " + " ".join(f"{c}->{k}" for c, k in enumerate(self.assignment)))
        return "\n".join(lines) + "\n"

    def to_csv(self, label: str = "model", header: bool = True) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if header:
            w.writerow(("source",) + self.FIELDS)
        w.writerow((label,) + tuple(getattr(self, k) for k in self.FIELDS))
        return buf.getvalue()


def _frac(mask: np.ndarray, correct: np.ndarray) -> float:
    return float(correct[mask].mean()) if mask.any() else 0.0


def _match(pred: np.ndarray, truth: np.ndarray, K: int) -> tuple[np.ndarray, np.ndarray]:
    w = np.zeros((K, K), dtype=np.int64)
    np.add.at(w, (pred, truth), 1)
    assignment, _ = hungarian(-w)
    return assignment, w


def cluster_acc(pred, truth, old_classes: Sequence[int], K: int | None = None,
                matching: str = "global") -> AccReport:
    """All / Old / New accuracy under the best one-to-one cluster-to-class map.

    With ``matching="global"`` one assignment is computed on all samples and
    reused for the old and new subsets; ``"per_subset"`` matches each subset
    separately (sensitivity analysis only).  Empty subsets report 0.0.
    """
    pred = np.asarray(pred).astype(np.int64).reshape(-1)
    truth = np.asarray(truth).astype(np.int64).reshape(-1)
    if pred.size == 0:
        raise EvaluationError("cluster_acc: empty input")
    if pred.shape != truth.shape:
        raise EvaluationError(f"cluster_acc: {pred.size} predictions vs {truth.size} labels")
    if K is None:
        K = int(max(pred.max(), truth.max())) + 1
    for name, ids in (("cluster", pred), ("class", truth)):
        if ids.min() < 0 or ids.max() >= K:
            raise EvaluationError(f"cluster_acc: {name} ids must lie in [0, {K})")
    old = np.isin(truth, np.asarray(list(old_classes), dtype=np.int64))
    assignment, w = _match(pred, truth, K)
    correct = assignment[pred] == truth
    if matching == "global":
        acc_old, acc_new = _frac(old, correct), _frac(~old, correct)
    elif matching == "per_subset":
        accs = []
        for mask in (old, ~old):
            if not mask.any():
                accs.append(0.0)
                continue
            a, _ = _match(pred[mask], truth[mask], K)
            accs.append(float((a[pred[mask]] == truth[mask]).mean()))
        acc_old, acc_new = accs
    else:
        raise EvaluationError(f"unknown matching mode {matching!r}")
    return AccReport(float(correct.mean()), acc_old, acc_new, assignment,
                     int(pred.size), int(old.sum()), int((~old).sum()), w)


# ---------------------------------------------------------------- k-means

class KMeansResult(NamedTuple):
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def greedy_kmeanspp(x: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding that keeps the best of ``2 + log K`` candidates per step."""
    n = x.shape[0]
    trials = 2 + int(math.log(K))
    centers = [x[rng.integers(n)]]
    closest = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, K):
        pot = closest.sum()
        if pot <= 0:
            cand = rng.integers(n, size=trials)
        else:
            cand = np.searchsorted(np.cumsum(closest), rng.random(trials) * pot)
            cand = np.minimum(cand, n - 1)
        dc = _sq_dists(x, x[cand])  # (n, trials)
        new_closest = np.minimum(closest[:, None], dc)
        best = int(np.argmin(new_closest.sum(axis=0)))
        centers.append(x[cand[best]])
        closest = new_closest[:, best]
    return np.array(centers)


def kmeans_fit(features, K: int, seed: int = 0, max_iters: int = 300) -> KMeansResult:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or not 1 <= K <= x.shape[0]:
        raise EvaluationError(f"kmeans: need 1 <= K <= n samples, got K={K}, shape {x.shape}")
    rng = np.random.default_rng(seed)
    centroids = greedy_kmeanspp(x, K, rng)
    labels = np.full(x.shape[0], -1)
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists(x, centroids)
        new = np.argmin(d, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            members = labels == k
            if members.any():
                centroids[k] = x[members].mean(axis=0)
        for k in range(K):
            if not (labels == k).any():
                # re-seed an empty cluster from the point farthest from its centroid
                far = int(np.argmax(((x - centroids[labels]) ** 2).sum(1)))
                centroids[k] = x[far]
                labels[far] = k
    inertia = float(((x - centroids[labels]) ** 2).sum())
    return KMeansResult(labels, centroids, inertia, it)


def kmeans(features, K: int, seed: int = 0, max_iters: int = 300) -> np.ndarray:
    """Cluster ids from greedy-seeded Lloyd iterations run to an assignment fixpoint."""
    return kmeans_fit(features, K, seed, max_iters).labels


def evaluate_model(params, dataset, tau: float = 0.1, matching: str = "global") -> AccReport:
    """Accuracy of the main head's argmax on the unlabeled part of ``dataset``."""
    from .model import predict

    x_u, y_u = dataset.unlabeled_truth()
    pred = np.argmax(predict(params, x_u, tau), axis=1)
    return cluster_acc(pred, y_u, dataset.old_classes, dataset.K, matching)


def evaluate_kmeans(features_u, dataset, seed: int = 0, matching: str = "global") -> AccReport:
    _, y_u = dataset.unlabeled_truth()
    pred = kmeans(features_u, dataset.K, seed)
    return cluster_acc(pred, y_u, dataset.old_classes, dataset.K, matching)
