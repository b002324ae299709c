"""Problem instances: labeled / unlabeled splits over embedding vectors.

Class ids are canonical: old (labeled) classes occupy ``[0, N)`` and new
classes ``[N, K)``.  Ground truth for unlabeled samples travels with a
:class:`SplitDataset` but the training loop only ever sees a
:class:`TrainingView`, in which unlabeled targets are masked out.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

LABELED = "labeled"
UNLABELED = "unlabeled"
UNKNOWN = -1


class DatasetError(ValueError):
    pass


class EmbeddingParseError(DatasetError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Sample:
    id: int
    features: np.ndarray
    true_class: int
    split_tag: str


@dataclass(frozen=True)
class AugmentSpec:
    noise_sigma: float = 0.1
    mask_fraction: float = 0.1

    def __post_init__(self):
        if not (math.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise DatasetError(f"noise_sigma must be finite and >= 0, got {self.noise_sigma}")
        if not (math.isfinite(self.mask_fraction) and 0 <= self.mask_fraction < 1):
            raise DatasetError(f"mask_fraction must lie in [0, 1), got {self.mask_fraction}")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SplitDataset:
    """An immutable G-FACE instance.

    ``classes`` holds ground truth for every row (``-1`` where an unlabeled
    row's class is unknown); ``labeled`` flags membership of D_L.
    """

    ids: np.ndarray
    features: np.ndarray
    classes: np.ndarray
    labeled: np.ndarray
    old_classes: tuple[int, ...]
    new_classes: tuple[int, ...]
    theta: float = float("nan")

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] == 0:
            raise DatasetError(f"features must be a non-empty (n, d) array, got shape {feats.shape}")
        n = feats.shape[0]
        classes = np.asarray(self.classes, dtype=np.int64)
        labeled = np.asarray(self.labeled, dtype=bool)
        ids = np.asarray(self.ids, dtype=np.int64)
        if classes.shape != (n,) or labeled.shape != (n,) or ids.shape != (n,):
            raise DatasetError("ids, classes and labeled must have one entry per sample")
        if not np.isfinite(feats).all():
            raise DatasetError("features contain non-finite values")
        old, new = set(self.old_classes), set(self.new_classes)
        if old & new:
            raise DatasetError(f"old and new classes overlap: {sorted(old & new)}")
        K = len(old) + len(new)
        if sorted(old) != list(range(len(old))) or sorted(new) != list(range(len(old), K)):
            raise DatasetError("class ids must be canonical: old in [0, N), new in [N, K)")
        if np.any(classes[labeled] == UNKNOWN):
            raise DatasetError("labeled samples need a class")
        bad = ~np.isin(classes[labeled], list(old))
        if bad.any():
            raise DatasetError(
                f"labeled sample with class {int(classes[labeled][bad][0])} outside the old classes")
        known = classes[classes != UNKNOWN]
        if known.size and (known.min() < 0 or known.max() >= K):
            raise DatasetError(f"class ids must lie in [0, {K})")
        object.__setattr__(self, "ids", _frozen(ids))
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "classes", _frozen(classes))
        object.__setattr__(self, "labeled", _frozen(labeled))
        object.__setattr__(self, "old_classes", tuple(sorted(old)))
        object.__setattr__(self, "new_classes", tuple(sorted(new)))
        unl = classes[~labeled]
        if unl.size and np.all(unl != UNKNOWN):
            theta = float(np.isin(unl, list(old)).sum()) / unl.size
            if not math.isnan(self.theta) and self.theta != theta:
                raise DatasetError(f"theta {self.theta} disagrees with the empirical fraction {theta}")
            object.__setattr__(self, "theta", theta)
        elif math.isnan(self.theta):
            raise DatasetError("theta must be supplied when unlabeled ground truth is unknown")

    @property
    def K(self) -> int:
        return len(self.old_classes) + len(self.new_classes)

    @property
    def N(self) -> int:
        return len(self.old_classes)

    @property
    def M(self) -> int:
        return len(self.new_classes)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_labeled(self) -> int:
        return int(self.labeled.sum())

    @property
    def n_unlabeled(self) -> int:
        return len(self) - self.n_labeled

    @property
    def has_ground_truth(self) -> bool:
        return bool(np.all(self.classes != UNKNOWN))

    @property
    def samples(self) -> list[Sample]:
        return [Sample(int(i), f, int(c), LABELED if l else UNLABELED)
                for i, f, c, l in zip(self.ids, self.features, self.classes, self.labeled)]

    def counts(self) -> dict[str, list[int]]:
        K = self.K
        return {
            "labeled": np.bincount(self.classes[self.labeled], minlength=K).tolist(),
            "unlabeled": np.bincount(self.classes[~self.labeled & (self.classes >= 0)],
                                     minlength=K).tolist(),
        }

    def manifest(self) -> dict:
        return {"K": self.K, "N": self.N, "M": self.M, "d": self.d, "theta": self.theta,
                "n_labeled": self.n_labeled, "n_unlabeled": self.n_unlabeled,
                "old_classes": list(self.old_classes), "new_classes": list(self.new_classes),
                "counts": self.counts()}

    def training_view(self) -> TrainingView:
        targets = np.where(self.labeled, self.classes, UNKNOWN)
        return TrainingView(self.features, _frozen(targets), self.labeled, self.K, self.N)

    def unlabeled_truth(self) -> tuple[np.ndarray, np.ndarray]:
        """Features and ground-truth classes of D_U (evaluation only)."""
        if not self.has_ground_truth:
            raise DatasetError("dataset carries no ground truth for its unlabeled samples")
        mask = ~self.labeled
        return self.features[mask], self.classes[mask]


@dataclass(frozen=True)
class TrainingView:
    """What the optimizer may see: features, labels on D_L only (``-1`` elsewhere)."""

    features: np.ndarray
    targets: np.ndarray
    labeled: np.ndarray
    K: int
    N: int

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray
    labeled: np.ndarray

    def __len__(self) -> int:
        return self.indices.size

    @property
    def n_labeled(self) -> int:
        return int(self.labeled.sum())


# ---------------------------------------------------------------- construction

def make_gface_split(features, classes, old_classes: Sequence[int], labeled_fraction: float = 0.5,
                     seed: int = 0, ids=None, K: int | None = None) -> SplitDataset:
    """Tag ``floor(labeled_fraction * count)`` samples of every old class as labeled.

    Selection is stratified per class and seeded.  Classes are remapped so old
    classes come first (in sorted order), followed by the remaining classes.
    """
    if not 0 < labeled_fraction < 1:
        raise DatasetError(f"labeled_fraction must lie in (0, 1), got {labeled_fraction}")
    features = np.asarray(features, dtype=np.float64)
    classes = np.asarray(classes, dtype=np.int64)
    old = sorted(set(int(c) for c in old_classes))
    present = set(np.unique(classes).tolist())
    if not old or not set(old) & present:
        raise DatasetError("no old-class samples: labeled data is impossible")
    new = sorted(present - set(old))
    if K is not None:
        extra = K - len(old) - len(new)
        if extra < 0:
            raise DatasetError(f"K={K} is smaller than the number of classes present")
        top = max(present | set(old)) + 1
        new += list(range(top, top + extra))
    remap = {c: i for i, c in enumerate(old + new)}
    canon = np.array([remap[int(c)] for c in classes], dtype=np.int64)
    rng = np.random.default_rng(seed)
    labeled = np.zeros(classes.size, dtype=bool)
    for c in range(len(old)):
        idx = np.flatnonzero(canon == c)
        if idx.size < 2:
            raise DatasetError(f"old class {old[c]} has {idx.size} samples; at least 2 required")
        take = int(math.floor(labeled_fraction * idx.size))
        labeled[rng.permutation(idx)[:take]] = True
    ids = np.arange(classes.size) if ids is None else np.asarray(ids)
    return SplitDataset(ids, features, canon, labeled,
                        tuple(range(len(old))), tuple(range(len(old), len(old) + len(new))))


def class_means(K: int, d: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """K points with pairwise distance ``separation`` (exact when d >= K)."""
    if d >= K:
        q, _ = np.linalg.qr(rng.normal(size=(d, d)))
        return separation / math.sqrt(2.0) * q[:, :K].T
    dirs = rng.normal(size=(K, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return separation / math.sqrt(2.0) * dirs


def generate_synthetic(K: int, N: int, d: int, per_class_counts: Sequence[int],
                       class_separation: float = 4.0,
                       overlap_pairs: Sequence[tuple[int, int, float]] = (), seed: int = 0,
                       noise: float = 1.0, labeled_fraction: float = 0.5) -> SplitDataset:
    """Gaussian-mixture instance with classes ``[0, N)`` old and ``[N, K)`` new.

    Each ``(a, b, s)`` in ``overlap_pairs`` moves the two class means towards
    their midpoint, shrinking their distance by the factor ``1 - 0.75 * s``.
    """
    if not 0 < N < K:
        raise DatasetError(f"need 0 < N < K, got N={N}, K={K}")
    if d < 2:
        raise DatasetError(f"need d >= 2, got {d}")
    counts = [int(c) for c in per_class_counts]
    if len(counts) != K or min(counts) <= 0:
        raise DatasetError(f"per_class_counts needs {K} positive entries, got {counts}")
    rng = np.random.default_rng(seed)
    means = class_means(K, d, class_separation, rng)
    for a, b, s in overlap_pairs:
        if not (0 <= a < K and 0 <= b < K and a != b and 0 <= s <= 1):
            raise DatasetError(f"invalid overlap pair {(a, b, s)}")
        mid = 0.5 * (means[a] + means[b])
        shrink = 0.75 * s
        means[a] = means[a] + shrink * (mid - means[a])
        means[b] = means[b] + shrink * (mid - means[b])
    classes = np.repeat(np.arange(K), counts)
    feats = means[classes] + noise * rng.normal(size=(classes.size, d))
    return make_gface_split(feats, classes, range(N), labeled_fraction,
                            seed=int(rng.integers(2**31)))


# ---------------------------------------------------------------- file format

def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def _format_float(v: float) -> str:
    return repr(float(v))


def dumps_embeddings(ds: SplitDataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(["id", "split", "class"] + [f"feat_{j}" for j in range(ds.d)]) + "\n")
    for i, f, c, l in zip(ds.ids, ds.features, ds.classes, ds.labeled):
        cls = "" if c == UNKNOWN else str(int(c))
        row = [str(int(i)), LABELED if l else UNLABELED, cls] + [_format_float(v) for v in f]
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def atomic_write(path, data: str | bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    kw = {} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""}
    try:
        with open(tmp, mode, **kw) as fh:
            fh.write(data)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def save_embeddings(ds: SplitDataset, path, manifest: bool = True) -> None:
    atomic_write(path, dumps_embeddings(ds))
    if manifest:
        atomic_write(manifest_path(path), json.dumps(ds.manifest(), indent=2) + "\n")


def load_embeddings(path, old_classes: Sequence[int] | None = None, K: int | None = None,
                    theta: float | None = None) -> SplitDataset:
    """Parse an embedding CSV (``id,split,class,feat_0,...``).

    The old-class set comes from ``old_classes``, else from a sidecar manifest
    written by :func:`save_embeddings`, else from the classes seen on labeled
    rows.  Class ids are remapped to the canonical layout.
    """
    path = Path(path)
    man = manifest_path(path)
    if old_classes is None and man.exists():
        meta = json.loads(man.read_text(encoding="utf-8"))
        old_classes = meta["old_classes"]
        K = meta["K"] if K is None else K
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise EmbeddingParseError(1, "empty file")
    header = rows[0]
    if header[:3] != ["id", "split", "class"] or len(header) < 4:
        raise EmbeddingParseError(1, "header must start with id,split,class,feat_0")
    d = len(header) - 3
    if header[3:] != [f"feat_{j}" for j in range(d)]:
        raise EmbeddingParseError(1, "feature columns must be feat_0..feat_{d-1} in order")
    ids, feats, classes, labeled = [], [], [], []
    old_set = None if old_classes is None else {int(c) for c in old_classes}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != d + 3:
            raise EmbeddingParseError(lineno, f"expected {d + 3} fields, got {len(row)}")
        split = row[1]
        if split not in (LABELED, UNLABELED):
            raise EmbeddingParseError(lineno, f"unknown split tag {split!r}")
        try:
            cls = UNKNOWN if row[2] == "" else int(row[2])
            vec = [float(v) for v in row[3:]]
            ident = int(row[0])
        except ValueError as exc:
            raise EmbeddingParseError(lineno, str(exc)) from None
        if split == LABELED:
            if cls == UNKNOWN:
                raise EmbeddingParseError(lineno, "labeled row without a class")
            if old_set is not None and cls not in old_set:
                raise EmbeddingParseError(
                    lineno, f"labeled row has class {cls}, which is not an old class; "
                            "labeled classes must be a subset of the unlabeled label space")
        if not all(math.isfinite(v) for v in vec):
            raise EmbeddingParseError(lineno, "non-finite feature value")
        ids.append(ident)
        feats.append(vec)
        classes.append(cls)
        labeled.append(split == LABELED)
    if not feats:
        raise EmbeddingParseError(2, "no data rows")
    classes = np.array(classes, dtype=np.int64)
    labeled = np.array(labeled)
    old = sorted(old_set) if old_set is not None else sorted(set(classes[labeled].tolist()))
    seen = set(classes[classes != UNKNOWN].tolist())
    new = sorted(seen - set(old))
    if K is not None:
        top = max(seen | set(old)) + 1
        new += list(range(top, top + K - len(old) - len(new)))
    remap = {c: i for i, c in enumerate(old + new)}
    remap[UNKNOWN] = UNKNOWN
    canon = np.array([remap[int(c)] for c in classes], dtype=np.int64)
    return SplitDataset(np.array(ids), np.array(feats), canon, labeled,
                        tuple(range(len(old))), tuple(range(len(old), len(old) + len(new))),
                        float("nan") if theta is None else theta)


# ---------------------------------------------------------------- augmentation

def _view(x: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    out = x.copy()
    if spec.noise_sigma > 0:
        out = out + rng.normal(0.0, spec.noise_sigma, size=x.shape)
    n_mask = int(math.floor(spec.mask_fraction * x.shape[-1] + 1e-9))
    if n_mask:
        order = np.argsort(rng.random(x.shape), axis=-1)[..., :n_mask]
        np.put_along_axis(out, order, 0.0, axis=-1)
    return out


def augment_two_views(x, spec: AugmentSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Two independently perturbed copies of a sample (or of every row of a batch)."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    return _view(x, spec, rng), _view(x, spec, rng)


def batches(data: TrainingView, batch_size: int, seed: int) -> Iterator[Batch]:
    """One epoch of seeded, shuffled mini-batches; the last one may be partial."""
    if batch_size < 2:
        raise DatasetError(f"batch_size must be >= 2, got {batch_size}")
    order = np.random.default_rng(seed).permutation(len(data))
    for start in range(0, order.size, batch_size):
        idx = order[start:start + batch_size]
        yield Batch(idx, data.features[idx], data.targets[idx], data.labeled[idx])
