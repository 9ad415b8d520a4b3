"""Ranking metrics used for offline evaluation."""
from typing import Sequence

import numpy as np
from sklearn.metrics import average_precision_score, roc_auc_score

from errors import UndefinedMetricError


def _as_arrays(scores: Sequence[float], labels: Sequence[int]):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise ValueError(f"scores and labels differ in shape: {scores.shape} vs {labels.shape}")
    return scores, labels


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Area under the ROC curve; tied scores count half a concordant pair.

    Raises:
        UndefinedMetricError: labels contain a single class
    """
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == labels.size:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    return float(roc_auc_score(labels, scores))


def auprc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """
    Area under the precision-recall curve with step interpolation.

    Tied scores enter the curve together, so this is average precision
    rather than the trapezoidal area.

    Raises:
        UndefinedMetricError: no positive labels
    """
    scores, labels = _as_arrays(scores, labels)
    if int(labels.sum()) == 0:
        raise UndefinedMetricError("AUPRC needs at least one positive label")
    return float(average_precision_score(labels, scores))


def gini(values: Sequence[float]) -> float:
    """Gini coefficient of a nonnegative distribution; 0 when everything is zero."""
    values = np.sort(np.asarray(values, dtype=float))
    if values.size == 0:
        raise UndefinedMetricError("Gini coefficient of an empty distribution")
    if np.any(values < 0):
        raise ValueError("Gini coefficient needs nonnegative values")
    total = values.sum()
    if total == 0:
        return 0.0
    n = values.size
    ranks = np.arange(1, n + 1)
    return float(2.0 * np.sum(ranks * values) / (n * total) - (n + 1.0) / n)
