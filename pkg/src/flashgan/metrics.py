"""Ranking and thresholded binary classification metrics.

The minority class is the positive class throughout.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .errors import UndefinedMetricError


def _prepare(scores, labels, positive_class: int = 1) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    if not np.all(np.isfinite(s)):
        raise UndefinedMetricError("scores contain non-finite values")
    return s, y == positive_class


def auc_roc(scores, labels, positive_class: int = 1) -> float:
    """Chance a random positive outscores a random negative, ties counting half."""
    s, pos = _prepare(scores, labels, positive_class)
    if pos.all() or not pos.any():
        raise UndefinedMetricError("AUC-ROC needs both classes")
    return _kernels.rank_auc(s, pos)


def auc_prc(scores, labels, positive_class: int = 1) -> float:
    """Step-integrated area under the precision-recall curve.

    Thresholds sweep every distinct score; tied scores enter together.
    """
    s, pos = _prepare(scores, labels, positive_class)
    if not pos.any():
        raise UndefinedMetricError("AUC-PRC needs at least one positive")
    return _kernels.step_average_precision(s, pos)


def threshold_metrics(scores, labels, tau: float = 0.5, positive_class: int = 1) -> dict[str, float]:
    """Precision, recall, F-score and accuracy of the decision ``score > tau``."""
    s, pos = _prepare(scores, labels, positive_class)
    pred = s > tau
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = int(np.sum(~pred & ~pos))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    accuracy = (tp + tn) / s.size if s.size else 0.0
    return {"f_score": f, "accuracy": accuracy, "precision": precision, "recall": recall}


def all_metrics(scores, labels, tau: float = 0.5, positive_class: int = 1) -> dict[str, float]:
    out = {
        "auc_prc": auc_prc(scores, labels, positive_class),
        "auc_roc": auc_roc(scores, labels, positive_class),
    }
    out.update(threshold_metrics(scores, labels, tau, positive_class))
    return out
