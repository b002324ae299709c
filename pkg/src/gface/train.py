"""Schedules, the per-batch objective and the epoch loop.

One SGD step per batch on the weighted total loss.  The adversarial min-max
is realised inside that single step by the gradient-reversal layer in front
of the auxiliary head: the head descends on the adversarial loss while the
extractor receives the negated gradient.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from . import numcore as nc
from .data import AugmentSpec, Batch, SplitDataset, atomic_write, augment_two_views, batches
from .evaluation import evaluate_model
from .model import (ModelParams, aux_logits, extract, init_model, load_checkpoint, main_logits,
                    project, pseudo_labels, save_checkpoint)

__all__ = ["TrainConfig", "TrainHistory", "TrainingDiverged", "schedule_lr", "schedule_tau_t",
           "schedule_e", "update_class_stats", "compute_losses", "train", "train_reference",
           "save_checkpoint", "load_checkpoint"]

HISTORY_COLUMNS = ("epoch", "lr", "tau_t", "e_t", "loss_rep", "loss_cls", "loss_ad", "loss_bal",
                   "loss_cluster", "loss_total", "acc_all", "acc_old", "acc_new")


class TrainingDiverged(RuntimeError):
    def __init__(self, component: str, epoch: int, batch: int, seed: int, detail: str = ""):
        super().__init__(f"non-finite value in {component} at epoch {epoch}, batch {batch} "
                         f"(replay seed {seed}) {detail}".rstrip())
        self.component = component
        self.epoch = epoch
        self.batch = batch
        self.seed = seed


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    warmup: int = 50
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0
    d_f: int = 64
    d_b: int = 32
    d_h: int = 128
    mu: float = 1.0
    dropout: float = 0.1
    tau_t_shape: str = "cosine"
    tau_t_epochs: int = 30
    lr_restart_period: int = 0
    stats_window: str = "epoch"

    def __post_init__(self):
        if self.epochs < 1:
            raise nc.ContractViolation(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.warmup <= self.epochs:
            raise nc.ContractViolation(f"warmup must lie in [0, epochs], got {self.warmup}")
        if not self.lr0 > 0:
            raise nc.ContractViolation(f"lr0 must be positive, got {self.lr0}")
        if self.batch_size < 2:
            raise nc.ContractViolation(f"batch_size must be >= 2, got {self.batch_size}")
        if self.tau_t_shape not in ("cosine", "linear"):
            raise nc.ContractViolation(f"tau_t_shape must be cosine or linear, got {self.tau_t_shape}")
        if self.stats_window not in ("epoch", "cumulative"):
            raise nc.ContractViolation(f"stats_window must be epoch or cumulative, got {self.stats_window}")
        if not self.mu > 0:
            raise nc.ContractViolation(f"mu must be positive, got {self.mu}")

    def ablated(self) -> TrainConfig:
        """The same run with all three debiasing terms switched off."""
        return replace(self, weights=replace(self.weights, lam_a=0.0, lam_b=0.0, lam_c=0.0))


# ---------------------------------------------------------------- schedules

def schedule_lr(t: int, T: int, lr0: float, restart_period: int = 0) -> float:
    """Half-cosine decay from ``lr0``; optional warm restarts every ``restart_period`` epochs."""
    if restart_period:
        t, T = t % restart_period, restart_period
    return lr0 * (1.0 + math.cos(math.pi * t / T)) / 2.0


def schedule_tau_t(t: int, start: float = 0.07, end: float = 0.04, epochs: int = 30,
                   shape: str = "cosine") -> float:
    if t >= epochs:
        return end
    if shape == "linear":
        return start + (end - start) * t / epochs
    return end + (start - end) * (1.0 + math.cos(math.pi * t / epochs)) / 2.0


def schedule_e(t: int, T: int) -> float:
    return 0.1 * (1.0 - t / T)


def update_class_stats(stats: L.ClassStats, probs, labels) -> L.ClassStats:
    """Count, per true class, how many labeled predictions were made and how many were right."""
    p = probs.data if isinstance(probs, nc.Tensor) else np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    K = stats.total.size
    hit = np.argmax(p, axis=1) == labels
    return L.ClassStats(stats.correct + np.bincount(labels[hit], minlength=K),
                        stats.total + np.bincount(labels, minlength=K))


# ---------------------------------------------------------------- objective

class _Guard:
    """Names the loss component being evaluated when a non-finite value appears."""

    def __init__(self):
        self.where = "forward"

    def __call__(self, name: str):
        self.where = name
        return self


def compute_losses(P, batch: Batch, cfg: TrainConfig, stats: L.ClassStats, e_t: float,
                   tau_t: float, epoch: int, seed: int, guard: _Guard | None = None
                   ) -> tuple[dict[str, nc.Tensor], nc.Tensor]:
    """Every loss component on one batch, plus the main-head probabilities of the
    first view (used to update the class statistics)."""
    guard = guard or _Guard()
    w = cfg.weights
    lab = np.asarray(batch.labeled, dtype=bool)
    li, ui = np.flatnonzero(lab), np.flatnonzero(~lab)
    y_l = np.asarray(batch.y)[lab]
    v1, v2 = augment_two_views(batch.x, cfg.augment, seed)

    guard("extractor")
    z1, z2 = extract(P, v1), extract(P, v2)
    guard("loss_rep")
    h1, h2 = project(P, z1), project(P, z2)
    l_self = L.loss_rep_self(h1, h2, w.tau_u)
    l_sup = L.loss_rep_sup(nc.take(h1, li), nc.take(h2, li), y_l, w.tau_c).loss
    comps = {"rep": L.loss_rep(l_self, l_sup, w.lam)}

    guard("loss_cls")
    student = main_logits(P, z1, w.tau_s).probs
    teacher = main_logits(P, z2, tau_t).probs
    comps["cls"] = L.loss_cls(student, teacher, batch.y, lab, w.lam, w.eps_ent)

    guard("loss_ad")
    if w.lam_a > 0:
        aux = aux_logits(P, z1, cfg.mu, training=True, seed=seed + 1, dropout=cfg.dropout).probs
        comps["ad"] = L.loss_ad(nc.take(aux, li), nc.take(student, li), nc.take(aux, ui),
                                pseudo_labels(nc.take(student, ui)), w.alpha)
    else:
        comps["ad"] = nc.Tensor(0.0)

    guard("loss_bal")
    if w.lam_b > 0 and li.size:
        comps["bal"] = L.loss_bal(nc.take(student, li), y_l, stats, e_t, w.eps_bal)
    else:
        comps["bal"] = nc.Tensor(0.0)

    guard("loss_cluster")
    # needs two classes for a between-class scatter; unit-norm features keep
    # the max-min term bounded whatever the feature scale
    if w.lam_c > 0 and epoch >= cfg.warmup and np.unique(y_l).size >= 2:
        feats = nc.l2_normalize(extract(P, np.asarray(batch.x)[li]))
        comps["cluster"] = L.loss_cluster(feats, y_l, w.beta, w.eps_wb)
    else:
        comps["cluster"] = nc.Tensor(0.0)
    guard("loss_total")
    return comps, student


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


class SGD:
    """Momentum SGD with L2 weight decay folded into the gradient."""

    def __init__(self, params: ModelParams, momentum: float, weight_decay: float):
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.arrays.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        for k, p in self.params.arrays.items():
            g = grads.get(k)
            g = self.weight_decay * p if g is None else g + self.weight_decay * p
            v = self.velocity[k]
            v *= self.momentum
            v += g
            p -= lr * v


# ---------------------------------------------------------------- history

@dataclass
class TrainHistory:
    rows: list[dict[str, float]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: ("" if isinstance(r[k], float) and math.isnan(r[k]) else r[k])
                        for k in HISTORY_COLUMNS})
        return buf.getvalue()

    def save(self, path) -> None:
        atomic_write(path, self.to_csv())

    @classmethod
    def load(cls, path) -> TrainHistory:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != HISTORY_COLUMNS:
                raise ValueError(f"{path}: not a training history (header {reader.fieldnames})")
            rows = []
            for lineno, r in enumerate(reader, start=2):
                try:
                    row = {k: (float("nan") if r[k] == "" else float(r[k])) for k in HISTORY_COLUMNS}
                except (TypeError, ValueError):
                    raise ValueError(f"{path}: line {lineno}: malformed history row") from None
                row["epoch"] = int(row["epoch"])
                rows.append(row)
        return cls(rows)


# ---------------------------------------------------------------- loops

def _init(dataset: SplitDataset, cfg: TrainConfig) -> ModelParams:
    return init_model(dataset.d, cfg.d_f, cfg.d_b, cfg.d_h, dataset.K, _seed(cfg.seed, 1))


def train(dataset: SplitDataset, config: TrainConfig, evaluate: bool = True,
          params: ModelParams | None = None,
          on_epoch: Callable[[int, dict, ModelParams], None] | None = None
          ) -> tuple[ModelParams, TrainHistory]:
    """Train on ``dataset`` and return the final parameters and a per-epoch history.

    Only the label-stripped training view drives the gradients.  When the
    dataset has ground truth and ``evaluate`` is set, each history row also
    carries All/Old/New accuracy on the unlabeled part.
    """
    cfg = config
    view = dataset.training_view()
    params = _init(dataset, cfg) if params is None else params.copy()
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    history = TrainHistory()
    can_eval = evaluate and dataset.has_ground_truth
    stats = L.ClassStats.fresh(dataset.K)
    guard = _Guard()
    for t in range(cfg.epochs):
        lr = schedule_lr(t, cfg.epochs, cfg.lr0, cfg.lr_restart_period)
        tau_t = schedule_tau_t(t, cfg.weights.tau_t, 0.04, cfg.tau_t_epochs, cfg.tau_t_shape)
        e_t = schedule_e(t, cfg.epochs)
        if cfg.stats_window == "epoch":
            stats = L.ClassStats.fresh(dataset.K)
        sums = dict.fromkeys(L.COMPONENTS + ("total",), 0.0)
        n_batches = 0
        for b, batch in enumerate(batches(view, cfg.batch_size, _seed(cfg.seed, 2, t))):
            seed = _seed(cfg.seed, 3, t, b)
            P = params.leaves()
            try:
                comps, student = compute_losses(P, batch, cfg, stats, e_t, tau_t, t, seed, guard)
                total = L.loss_total(comps, cfg.weights, t, cfg.warmup)
                grads = nc.backward(total)
            except nc.NonFiniteError as exc:
                raise TrainingDiverged(guard.where, t, b, seed, str(exc)) from exc
            opt.step({leaf.name: g for leaf, g in grads.items()}, lr)
            for k, a in params.arrays.items():
                if not np.isfinite(a).all():
                    raise TrainingDiverged(f"parameter update ({k})", t, b, seed)
            if batch.n_labeled:
                stats = update_class_stats(stats, student.data[batch.labeled], batch.y[batch.labeled])
            for k in L.COMPONENTS:
                sums[k] += comps[k].item()
            sums["total"] += total.item()
            n_batches += 1
        row = {"epoch": t, "lr": lr, "tau_t": tau_t, "e_t": e_t}
        row.update({f"loss_{k}": v / n_batches for k, v in sums.items()})
        if can_eval:
            rep = evaluate_model(params, dataset, cfg.weights.tau_s)
            row.update(acc_all=rep.acc_all, acc_old=rep.acc_old, acc_new=rep.acc_new)
        else:
            row.update(acc_all=float("nan"), acc_old=float("nan"), acc_new=float("nan"))
        history.rows.append(row)
        if on_epoch is not None:
            on_epoch(t, row, params)
    return params, history


def train_reference(dataset: SplitDataset, config: TrainConfig) -> ModelParams:
    """Fully supervised model on every sample's true class (labeled and unlabeled).

    Serves as the stand-in for the joint-error minimiser in the bound check,
    so it needs ground truth for the whole dataset.
    """
    if not dataset.has_ground_truth:
        raise ValueError("train_reference needs ground truth for every sample")
    cfg = config
    params = init_model(dataset.d, cfg.d_f, cfg.d_b, cfg.d_h, dataset.K, _seed(cfg.seed, 11))
    opt = SGD(params, cfg.momentum, cfg.weight_decay)
    x_all, y_all = dataset.features, dataset.classes
    for t in range(cfg.epochs):
        lr = schedule_lr(t, cfg.epochs, cfg.lr0)
        order = np.random.default_rng(_seed(cfg.seed, 12, t)).permutation(len(dataset))
        for b, start in enumerate(range(0, order.size, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            v1, _ = augment_two_views(x_all[idx], cfg.augment, _seed(cfg.seed, 13, t, b))
            P = params.leaves()
            probs = main_logits(P, extract(P, v1), cfg.weights.tau_s).probs
            loss = nc.cross_entropy(probs, y_all[idx])
            grads = nc.backward(loss)
            opt.step({leaf.name: g for leaf, g in grads.items()}, lr)
    return params
