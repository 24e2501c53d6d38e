"""Regression and classification metrics for sentiment scores.

Continuous scores are binned into k equal-width classes over the label range
(round to nearest class, clamp). Binary accuracy and F1 come in two
conventions: has-0 treats zero labels as non-negative, non-0 drops them and
compares negative against positive.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np


@dataclass
class MetricReport:
    mae: float
    corr: float
    acc2_has0: float
    acc2_non0: float
    acc3: float
    acc5: float
    acc7: float
    f1_has0: float
    f1_non0: float
    corr_degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def bin_scores(scores: np.ndarray, label_range: tuple[float, float], k: int) -> np.ndarray:
    """Map scores to classes 0..k-1, equal width over the label range."""
    lo, hi = label_range
    pos = (np.asarray(scores, dtype=np.float64) - lo) / (hi - lo) * (k - 1)
    return np.clip(np.rint(pos), 0, k - 1).astype(int)


def pearson_corr(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    """Pearson correlation; (0.0, True) when either input has zero variance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da, db = a - a.mean(), b - b.mean()
    na, nb = np.sqrt((da * da).sum()), np.sqrt((db * db).sum())
    if na == 0.0 or nb == 0.0:
        return 0.0, True
    return float((da * db).sum() / (na * nb)), False


def weighted_f1(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    """F1 averaged over classes, weighted by true-class support."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    total = 0.0
    for cls in np.unique(y_true):
        tp = float(np.sum((y_pred == cls) & (y_true == cls)))
        fp = float(np.sum((y_pred == cls) & (y_true != cls)))
        fn = float(np.sum((y_pred != cls) & (y_true == cls)))
        support = tp + fn
        f1 = 0.0 if tp == 0.0 else 2 * tp / (2 * tp + fp + fn)
        total += f1 * support
    return total / len(y_true)


def compute_metrics(y_hat, y, label_range: tuple[float, float]) -> MetricReport:
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size == 0 or y_hat.size != y.size:
        raise ValueError(f"compute_metrics: got {y_hat.size} predictions for {y.size} labels")

    mae = float(np.mean(np.abs(y - y_hat)))
    corr, degenerate = pearson_corr(y_hat, y)

    # has-0: negative vs non-negative
    pred_nonneg = y_hat >= 0
    true_nonneg = y >= 0
    acc2_has0 = float(np.mean(pred_nonneg == true_nonneg))
    f1_has0 = weighted_f1(true_nonneg.astype(int), pred_nonneg.astype(int))

    # non-0: negative vs positive, zero labels excluded
    keep = y != 0
    if np.any(keep):
        pred_pos = y_hat[keep] > 0
        true_pos = y[keep] > 0
        acc2_non0 = float(np.mean(pred_pos == true_pos))
        f1_non0 = weighted_f1(true_pos.astype(int), pred_pos.astype(int))
    else:
        acc2_non0 = 0.0
        f1_non0 = 0.0

    accs = {}
    for k in (3, 5, 7):
        accs[k] = float(np.mean(bin_scores(y_hat, label_range, k) == bin_scores(y, label_range, k)))

    return MetricReport(
        mae=mae,
        corr=corr,
        acc2_has0=acc2_has0,
        acc2_non0=acc2_non0,
        acc3=accs[3],
        acc5=accs[5],
        acc7=accs[7],
        f1_has0=f1_has0,
        f1_non0=f1_non0,
        corr_degenerate=degenerate,
    )
