"""Joint training loop and evaluation metrics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import Split, batch_iter
from .losses import LossReport, LossWeights
from .model import ItscModel
from .nn import AdamState, adam_step

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, report: LossReport):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}: {report}")
        self.epoch, self.batch, self.report = epoch, batch, report


@dataclass
class EpochRecord:
    epoch: int
    l_imp: float
    l_cls: float
    l_total: float
    train_acc: float
    seconds: float


@dataclass
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # rows = true class, columns = predicted

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "confusion": self.confusion.tolist()}

    def table(self) -> str:
        lines = [f"{'metric':<10} {'value':>8}"]
        for k in ("accuracy", "precision", "recall", "f1"):
            lines.append(f"{k:<10} {getattr(self, k):>8.4f}")
        return "\n".join(lines)


def metrics_from_confusion(confusion: np.ndarray) -> MetricsReport:
    """Accuracy and macro precision/recall/F1; 0/0 counts as 0."""
    cm = np.asarray(confusion, dtype=np.int64)
    tp = np.diag(cm).astype(float)
    pred = cm.sum(axis=0)
    true = cm.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        prec = np.where(pred > 0, tp / pred, 0.0)
        rec = np.where(true > 0, tp / true, 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    total = cm.sum()
    return MetricsReport(float(tp.sum() / total), float(prec.mean()), float(rec.mean()), float(f1.mean()), cm)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def evaluate(model: ItscModel, split: Split, num_classes: int | None = None) -> MetricsReport:
    if len(split) == 0:
        raise ValueError("cannot evaluate an empty dataset")
    C = num_classes or model.arch.num_classes
    probs = model.predict_proba(split.values, split.masks)
    pred = probs.argmax(axis=1)
    return metrics_from_confusion(confusion_matrix(split.labels, pred, C))


def train(
    model: ItscModel,
    split: Split,
    weights: LossWeights,
    epochs: int,
    batch_size: int,
    lr: float = 3e-4,
    seed: int = 0,
    on_epoch=None,
) -> list[EpochRecord]:
    """Train ``model`` in place with Adam; returns one record per epoch.

    Each batch runs the imputer, the classifier and both losses, then applies
    a single Adam step on the weighted total. Epoch losses are
    sample-weighted means over batches.
    """
    params = model.parameters()
    opt = AdamState(learning_rate=lr)
    history = []
    for epoch in range(epochs):
        t0 = time.perf_counter()
        sums = np.zeros(3)
        correct = 0
        for b, idx in enumerate(batch_iter(len(split), batch_size, seed, epoch)):
            res = model.loss_and_grads(split.values[idx], split.masks[idx], split.labels[idx], weights)
            rep = LossReport(res.l_imp, res.l_cls, res.l_total, len(idx))
            if not np.isfinite([rep.l_imp, rep.l_cls, rep.l_total]).all():
                raise NonFiniteLossError(epoch, b, rep)
            adam_step(params, res.grads, opt)
            sums += len(idx) * np.array([rep.l_imp, rep.l_cls, rep.l_total])
            correct += int((res.probabilities.argmax(axis=1) == split.labels[idx]).sum())
        l_imp, l_cls, l_total = sums / len(split)
        rec = EpochRecord(epoch, l_imp, l_cls, l_total, correct / len(split), time.perf_counter() - t0)
        history.append(rec)
        log.info("epoch %d: l_imp=%.4f l_cls=%.4f total=%.4f train_acc=%.3f (%.1fs)",
                 epoch, l_imp, l_cls, l_total, rec.train_acc, rec.seconds)
        if on_epoch is not None:
            on_epoch(rec)
    return history


LOSS_CSV_FIELDS = ("epoch", "l_imp", "l_cls", "l_total", "train_acc")


def write_loss_csv(history: list[EpochRecord], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOSS_CSV_FIELDS)
        for r in history:
            w.writerow([r.epoch, repr(float(r.l_imp)), repr(float(r.l_cls)), repr(float(r.l_total)), repr(float(r.train_acc))])
