"""Masked imputation loss, classification loss and their weighted sum."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0  # classification
    beta: float = 1.0  # imputation

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha == 0 and self.beta == 0:
            raise ValueError("alpha and beta cannot both be zero")


@dataclass(frozen=True)
class LossReport:
    l_imp: float
    l_cls: float
    l_total: float
    batch_size: int


def imputation_loss(X: np.ndarray, X_hat: np.ndarray, M: np.ndarray) -> float:
    """Squared error of the one-step estimates at observed steps ``2..T``,
    summed over time and dimensions, averaged over the batch.

    Inputs are ``(Q, T, n)``; a single ``(T, n)`` series counts as ``Q = 1``.
    Missing positions of ``X`` may hold anything (NaN included).
    """
    if X.ndim == 2:
        X, X_hat, M = X[None], X_hat[None], M[None]
    obs = M[:, 1:] != 0
    if not obs.any():
        log.debug("imputation loss over a batch with no observed values past the first step")
    diff = np.where(obs, X[:, 1:] - X_hat[:, 1:], 0.0)
    return float((diff * diff).sum() / X.shape[0])


def imputation_loss_grad(X: np.ndarray, X_hat: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Gradient of :func:`imputation_loss` with respect to ``X_hat``."""
    obs = M != 0
    obs[:, 0] = False
    g = np.where(obs, X_hat - X, 0.0) * (2.0 / X.shape[0])
    return g.astype(X_hat.dtype, copy=False)


def classification_loss(labels: np.ndarray, probabilities: np.ndarray) -> float:
    """Mean negative log-probability of the true class."""
    labels = np.asarray(labels)
    p = probabilities[np.arange(len(labels)), labels]
    if np.any(p < PROB_FLOOR):
        log.warning("probability of a true label below %g; clamping", PROB_FLOOR)
        p = np.maximum(p, PROB_FLOOR)
    return float(-np.log(p).mean())


def total_loss(l_cls: float, l_imp: float, weights: LossWeights) -> float:
    return weights.alpha * l_cls + weights.beta * l_imp
