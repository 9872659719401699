"""Incomplete time series classification with a jointly trained GRU imputer
and a multi-scale dilated convolutional feature learner."""

from .data import DatasetBundle, Split, apply_mcar, batch_iter, load_ucr, znormalize
from .imputation import GruParams, impute_sequence
from .losses import LossWeights, classification_loss, imputation_loss, total_loss
from .model import Arch, ItscModel
from .msfl import Msfl, MsflSpec, kernel_set
from .training import MetricsReport, evaluate, train

__all__ = [
    "Arch", "DatasetBundle", "GruParams", "ItscModel", "LossWeights", "MetricsReport", "Msfl", "MsflSpec",
    "Split", "apply_mcar", "batch_iter", "classification_loss", "evaluate", "impute_sequence",
    "imputation_loss", "kernel_set", "load_ucr", "total_loss", "train", "znormalize",
]
