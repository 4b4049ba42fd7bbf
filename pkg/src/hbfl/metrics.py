"""Detection metrics: accuracy, detection rate, false alarm rate, F1 (all in percent)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, ShapeError

BENIGN = "Benign"
DEFAULT_THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, predicted, actual) -> "ConfusionCounts":
        p = np.asarray(predicted, dtype=bool)
        a = np.asarray(actual, dtype=bool)
        return cls(int(np.sum(p & a)), int(np.sum(~p & ~a)), int(np.sum(p & ~a)), int(np.sum(~p & a)))


def _pct(num: int, den: int) -> float | None:
    return None if den == 0 else 100.0 * num / den


@dataclass(frozen=True)
class Metrics:
    """One evaluation slice; a metric whose denominator is zero is None."""

    counts: ConfusionCounts
    accuracy: float | None
    dr: float | None
    far: float | None
    precision: float | None
    f1: float | None

    @classmethod
    def from_counts(cls, c: ConfusionCounts) -> "Metrics":
        acc = _pct(c.tp + c.tn, c.total)
        dr = _pct(c.tp, c.tp + c.fn)
        far = _pct(c.fp, c.fp + c.tn)
        prec = _pct(c.tp, c.tp + c.fp)
        if dr is None or prec is None or dr + prec == 0:
            f1 = None
        else:
            f1 = 2.0 * dr * prec / (dr + prec)
        return cls(c, acc, dr, far, prec, f1)


@dataclass(frozen=True)
class MetricsReport:
    overall: Metrics
    per_class: dict[str, Metrics]
    threshold: float = DEFAULT_THRESHOLD


def compute_metrics(scores, labels, classes=None, threshold: float = DEFAULT_THRESHOLD) -> MetricsReport:
    """Threshold attack probabilities and score them overall and per attack class.

    A class slice is every benign row plus that class's rows, so each
    per-class accuracy and FAR is measured against the same benign traffic.
    """
    if not 0.0 < threshold < 1.0:
        raise ArgumentError(f"threshold must be in (0, 1), got {threshold}")
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise ShapeError(f"{s.size} scores but {y.size} labels")
    pred = s >= threshold
    overall = Metrics.from_counts(ConfusionCounts.from_predictions(pred, y))
    per_class: dict[str, Metrics] = {}
    if classes is not None:
        c = np.asarray(classes, dtype=object).reshape(-1)
        if c.shape != y.shape:
            raise ShapeError(f"{c.size} class tags but {y.size} labels")
        benign = c == BENIGN
        for tag in sorted(set(c.tolist()) - {BENIGN}):
            m = benign | (c == tag)
            per_class[tag] = Metrics.from_counts(ConfusionCounts.from_predictions(pred[m], y[m]))
    return MetricsReport(overall, per_class, threshold)
