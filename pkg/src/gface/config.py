"""Run configuration: a YAML document with one section per concern.

Sections are ``data``, ``model``, ``loss_weights``, ``schedules``, ``train``,
``eval`` and ``theory``.  Unknown sections or keys are errors.  The resolved
configuration is written back out with :func:`dump_config`; feeding that echo
in again reproduces the run.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .data import AugmentSpec
from .losses import LossWeights
from .numcore import ContractViolation
from .train import TrainConfig

SEED_ENV = "GFACE_SEED"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataSpec:
    K: int = 7
    N: int = 4
    d: int = 16
    per_class_counts: tuple[int, ...] = (100,) * 7
    class_separation: float = 4.0
    overlap_pairs: tuple[tuple[int, int, float], ...] = ()
    noise: float = 1.0
    labeled_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.N < self.K:
            raise ConfigError(f"data: need 0 < N < K, got N={self.N}, K={self.K}")
        if len(self.per_class_counts) != self.K:
            raise ConfigError(f"data: per_class_counts needs {self.K} entries")
        if not 0 < self.labeled_fraction < 1:
            raise ConfigError("data: labeled_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class EvalSpec:
    tau: float = 0.1
    matching: str = "global"
    kmeans_seed: int = 0

    def __post_init__(self):
        if self.matching not in ("global", "per_subset"):
            raise ConfigError(f"eval: unknown matching {self.matching!r}")


@dataclass(frozen=True)
class TheorySpec:
    alpha: float = 2.0
    n_perturb: int = 8
    perturb_scale: float = 0.1
    reference_epochs: int = 30
    align: bool = True

    def __post_init__(self):
        if self.n_perturb < 0:
            raise ConfigError("theory: n_perturb must be >= 0")
        if self.reference_epochs < 1:
            raise ConfigError("theory: reference_epochs must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    data: DataSpec = field(default_factory=DataSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSpec = field(default_factory=EvalSpec)
    theory: TheorySpec = field(default_factory=TheorySpec)


# which TrainConfig fields each document section owns
_MODEL_KEYS = ("d_f", "d_b", "d_h", "mu", "dropout")
_SCHEDULE_KEYS = ("lr0", "lr_restart_period", "tau_t_shape", "tau_t_epochs")
_TRAIN_KEYS = ("epochs", "warmup", "batch_size", "momentum", "weight_decay", "seed", "stats_window")
SECTIONS = ("data", "model", "loss_weights", "schedules", "train", "eval", "theory")


def _take(section: str, doc: Mapping[str, Any], allowed) -> dict:
    if doc is None:
        return {}
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{section}: expected a mapping, got {type(doc).__name__}")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {', '.join(map(str, unknown))}")
    return dict(doc)


def _names(cls) -> tuple[str, ...]:
    return tuple(f.name for f in fields(cls))


def from_dict(doc: Mapping[str, Any] | None) -> RunConfig:
    doc = doc or {}
    if not isinstance(doc, Mapping):
        raise ConfigError("config: top level must be a mapping")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"config: unknown section(s) {', '.join(map(str, unknown))}")
    try:
        data = _take("data", doc.get("data"), _names(DataSpec))
        if "per_class_counts" in data:
            data["per_class_counts"] = tuple(int(c) for c in data["per_class_counts"])
        if "overlap_pairs" in data:
            data["overlap_pairs"] = tuple((int(a), int(b), float(s)) for a, b, s in data["overlap_pairs"])
        tr = _take("train", doc.get("train"), _TRAIN_KEYS + ("augment",))
        augment = AugmentSpec(**_take("train.augment", tr.pop("augment", None), _names(AugmentSpec)))
        tr.update(_take("model", doc.get("model"), _MODEL_KEYS))
        tr.update(_take("schedules", doc.get("schedules"), _SCHEDULE_KEYS))
        weights = LossWeights(**_take("loss_weights", doc.get("loss_weights"), _names(LossWeights)))
        return RunConfig(
            data=DataSpec(**data),
            train=TrainConfig(weights=weights, augment=augment, **tr),
            eval=EvalSpec(**_take("eval", doc.get("eval"), _names(EvalSpec))),
            theory=TheorySpec(**_take("theory", doc.get("theory"), _names(TheorySpec))),
        )
    except (TypeError, ContractViolation, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"config: {exc}") from exc


def to_dict(cfg: RunConfig) -> dict:
    t = asdict(cfg.train)
    data = asdict(cfg.data)
    data["per_class_counts"] = list(data["per_class_counts"])
    data["overlap_pairs"] = [list(p) for p in data["overlap_pairs"]]
    return {
        "data": data,
        "model": {k: t[k] for k in _MODEL_KEYS},
        "loss_weights": t["weights"],
        "schedules": {k: t[k] for k in _SCHEDULE_KEYS},
        "train": {**{k: t[k] for k in _TRAIN_KEYS}, "augment": t["augment"]},
        "eval": asdict(cfg.eval),
        "theory": asdict(cfg.theory),
    }


def load_config(path: str | os.PathLike | None) -> RunConfig:
    """Parse a YAML (or JSON) config file; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    return from_dict(doc)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def with_seed(cfg: RunConfig, seed: int | None = None) -> RunConfig:
    """Apply a seed override: explicit ``seed`` first, then ``$GFACE_SEED``."""
    if seed is None:
        env = os.environ.get(SEED_ENV)
        if env is None or env == "":
            return cfg
        try:
            seed = int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return replace(cfg, data=replace(cfg.data, seed=seed), train=replace(cfg.train, seed=seed))
