"""Scores and statistical tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .domain import CLOCK_TASKS, DAY_MINUTES, N_SLOTS, SLOT_MINUTES


def _check_labels(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError(f"label vectors must be 1-D with equal length, got {y_true.shape} and {y_pred.shape}")
    if y_true.size == 0:
        raise ValueError("empty label vectors")
    for y in (y_true, y_pred):
        if y.min() < 0 or y.max() >= N_SLOTS:
            raise ValueError("labels outside [0, 96)")
    return y_true, y_pred


def confusion(y_true, y_pred, n_classes: int = N_SLOTS) -> np.ndarray:
    """Counts with rows indexed by the true class and columns by the prediction."""
    y_true, y_pred = _check_labels(y_true, y_pred)
    return np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def _weighted_f1(tp: np.ndarray, support: np.ndarray, predicted: np.ndarray) -> float:
    tp, support, predicted = (a.astype(float) for a in (tp, support, predicted))
    if support.sum() == 0:
        raise ValueError("no labelled rows")
    # F1 = 2PR/(P+R) = 2TP / (support + predicted); 0 when both are empty
    denom = support + predicted
    f1 = np.divide(2.0 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(np.sum(f1 * support) / support.sum())


def weighted_f1_from_confusion(cm: np.ndarray) -> float:
    return _weighted_f1(np.diag(cm), cm.sum(axis=1), cm.sum(axis=0))


def weighted_f1(y_true, y_pred) -> float:
    """Per-class F1 averaged with true-class supports as weights."""
    y_true, y_pred = _check_labels(y_true, y_pred)
    hit = y_true[y_true == y_pred]
    return _weighted_f1(
        np.bincount(hit, minlength=N_SLOTS),
        np.bincount(y_true, minlength=N_SLOTS),
        np.bincount(y_pred, minlength=N_SLOTS),
    )


def mean_minute_error(y_true, y_pred, clock: bool = True, misclassified_only: bool = True) -> float:
    """Average distance in minutes between predicted and true slot midpoints.

    Clock targets use the circular distance around midnight. By default only
    misclassified rows are averaged; ``misclassified_only=False`` averages over
    all rows (correct rows count as zero).
    """
    y_true, y_pred = _check_labels(y_true, y_pred)
    d = np.abs(y_pred - y_true).astype(float) * SLOT_MINUTES
    if clock:
        d = np.minimum(d, DAY_MINUTES - d)
    if misclassified_only:
        d = d[y_true != y_pred]
        if d.size == 0:
            return 0.0
    return float(d.mean())


@dataclass(frozen=True)
class TaskScore:
    weighted_f1: float
    mean_minute_error: float
    confusion: np.ndarray

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)


@dataclass(frozen=True)
class ScoreReport:
    tasks: tuple[TaskScore, ...]

    @property
    def f1(self) -> np.ndarray:
        return np.array([t.weighted_f1 for t in self.tasks])

    @property
    def minute_error(self) -> np.ndarray:
        return np.array([t.mean_minute_error for t in self.tasks])

    @property
    def mean_f1(self) -> float:
        return float(self.f1.mean())


def score_tasks(Y_true, Y_pred, clock=CLOCK_TASKS, misclassified_only: bool = True) -> ScoreReport:
    Y_true = np.asarray(Y_true)
    Y_pred = np.asarray(Y_pred)
    out = []
    for t in range(Y_true.shape[1]):
        cm = confusion(Y_true[:, t], Y_pred[:, t])
        out.append(
            TaskScore(
                weighted_f1_from_confusion(cm),
                mean_minute_error(Y_true[:, t], Y_pred[:, t], clock=clock[t], misclassified_only=misclassified_only),
                cm,
            )
        )
    return ScoreReport(tuple(out))


def pearson_noncorrelation_test(x, y) -> tuple[float, float]:
    """Pearson r and the two-sided t-test p-value for r = 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D with equal length")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 points, got {n}")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(xc @ xc)
    syy = float(yc @ yc)
    if sxx <= 0.0 or syy <= 0.0:
        raise ValueError("zero variance in x or y")
    r = float(np.clip((xc @ yc) / np.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        return r, 0.0
    t = r * np.sqrt((n - 2) / (1.0 - r * r))
    p = float(2.0 * stats.t.sf(abs(t), n - 2))
    return r, p


def fdr_adjust(pvalues) -> np.ndarray:
    """Benjamini-Hochberg adjusted p-values, in input order."""
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1:
        raise ValueError("p-values must be a 1-D sequence")
    if p.size == 0:
        return p.copy()
    if np.any((p < 0) | (p > 1)) or np.any(np.isnan(p)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m / np.arange(1, m + 1)
    q = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(q, 1.0)
    return out
