"""Generalized facial-expression category discovery at desk scale.

A small numpy autodiff core, a synthetic benchmark, the two-head model and its
losses, a training loop, clustering evaluation and empirical bound checks.
"""

from .data import SplitDataset, generate_synthetic, load_embeddings, save_embeddings
from .evaluation import AccReport, cluster_acc, hungarian, kmeans
from .losses import LossWeights
from .model import ModelParams, init_model, predict
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AccReport", "LossWeights", "ModelParams", "SplitDataset", "TrainConfig",
    "cluster_acc", "generate_synthetic", "hungarian", "init_model", "kmeans",
    "load_embeddings", "predict", "save_embeddings", "train",
]
