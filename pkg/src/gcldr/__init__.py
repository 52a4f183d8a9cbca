"""Latent-domain discovery and unification for recognition tasks where test
(class, domain) combinations never appear in training."""

from .estimator import GcldrClassifier
from .metrics import MetricsReport, auc_one_vs_rest, metrics
from .model import ModelBundle, build_bundle, load_checkpoint, save_checkpoint
from .tensor import Tensor, cross_entropy
from .trainer import TrainConfig, fit, predict

__version__ = "0.1.0"

__all__ = [
    "GcldrClassifier",
    "MetricsReport",
    "ModelBundle",
    "Tensor",
    "TrainConfig",
    "auc_one_vs_rest",
    "build_bundle",
    "cross_entropy",
    "fit",
    "load_checkpoint",
    "metrics",
    "predict",
    "save_checkpoint",
    "__version__",
]
