"""Confusion-matrix metrics and multi-seed aggregation."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

METRICS = ("accuracy", "f1_macro", "kappa")


@dataclass
class ConfusionMatrix:
    """``counts[true, predicted]``."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValidationError(f"confusion matrix must be square, got shape {counts.shape}")
        if (counts < 0).any() or not np.all(np.equal(np.mod(counts, 1), 0)):
            raise ValidationError("confusion counts must be nonnegative integers")
        self.counts = counts.astype(np.int64)

    @classmethod
    def from_labels(cls, y_true, y_pred, n_classes: int) -> "ConfusionMatrix":
        counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true, dtype=np.intp), np.asarray(y_pred, dtype=np.intp)), 1)
        return cls(counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def _nonempty(self):
        if self.total == 0:
            raise ValidationError("confusion matrix is empty")


def accuracy(cm: ConfusionMatrix) -> float:
    cm._nonempty()
    return float(np.trace(cm.counts) / cm.total)


def micro_f1(cm: ConfusionMatrix) -> float:
    """Micro-averaged F1 from pooled TP/FP/FN counts."""
    cm._nonempty()
    tp = np.trace(cm.counts)
    fp = cm.counts.sum() - tp  # every off-diagonal count is one FP and one FN
    fn = fp
    return float(2 * tp / (2 * tp + fp + fn))


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    tp = np.diag(cm.counts).astype(np.float64)
    pred = cm.counts.sum(axis=0)
    true = cm.counts.sum(axis=1)
    precision = np.divide(tp, pred, out=np.zeros_like(tp), where=pred > 0)
    recall = np.divide(tp, true, out=np.zeros_like(tp), where=true > 0)
    denom = precision + recall
    return np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)


def f1_macro(cm: ConfusionMatrix) -> float:
    """Unweighted class mean of F1; zero denominators count as 0."""
    cm._nonempty()
    return float(per_class_f1(cm).mean())


def cohens_kappa(cm: ConfusionMatrix) -> float:
    cm._nonempty()
    n = cm.total
    p_o = np.trace(cm.counts) / n
    p_e = float(np.dot(cm.counts.sum(axis=1), cm.counts.sum(axis=0))) / (n * n)
    if p_e == 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def score(cm: ConfusionMatrix) -> dict[str, float]:
    return {"accuracy": accuracy(cm), "f1_macro": f1_macro(cm), "kappa": cohens_kappa(cm)}


@dataclass
class MetricSummary:
    mean: float
    std: float | None  # None when fewer than two runs
    n: int


def aggregate_seeds(runs: list[dict], metrics=METRICS) -> dict[str, MetricSummary]:
    """Per-metric mean and sample (n-1) standard deviation over runs.

    ``statistics`` sums exactly, so identical runs give a std of exactly 0.
    """
    if not runs:
        raise ValidationError("no runs to aggregate")
    out = {}
    for name in metrics:
        vals = [float(r[name]) for r in runs]
        std = statistics.stdev(vals) if len(vals) >= 2 else None
        out[name] = MetricSummary(statistics.fmean(vals) if len(set(vals)) > 1 else vals[0], std, len(vals))
    return out


def format_mean_std(s: MetricSummary, scale: float = 100.0) -> str:
    if s.std is None or math.isnan(s.std):
        return f"{s.mean * scale:.2f}"
    return f"{s.mean * scale:.2f} ± {s.std * scale:.2f}"
