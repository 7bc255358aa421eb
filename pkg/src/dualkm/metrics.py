"""Evaluation metrics for regression and classification."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

__all__ = ["rmse", "relative_error", "accuracy", "roc_auc", "METRICS", "evaluate"]


def _pair(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {y_true.size} labels vs {y_pred.size} predictions")
    if y_true.size == 0:
        raise ValueError("cannot score an empty input")
    return y_true, y_pred


def rmse(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)))


def relative_error(y_true, y_pred) -> float:
    """``||y - y_hat||_2 / ||y||_2``."""
    y_true, y_pred = _pair(y_true, y_pred)
    denom = np.linalg.norm(y_true)
    if denom == 0:
        raise ValueError("relative error is undefined for an all-zero target")
    return float(np.linalg.norm(y_true - y_pred) / denom)


def accuracy(y_true, y_pred) -> float:
    y_true, y_pred = _pair(y_true, y_pred)
    return float(np.mean(y_true == y_pred))


def roc_auc(y_true, scores) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic.

    The larger label value is the positive class.  Tied scores contribute
    one half per positive/negative pair.

    >>> roc_auc([-1, -1, 1, 1], [0.1, 0.4, 0.35, 0.8])
    0.75
    """
    y_true, scores = _pair(y_true, scores)
    labels = np.unique(y_true)
    if labels.size != 2:
        raise ValueError(f"AUC needs exactly two label values, found {labels.size}")
    pos = y_true == labels[1]
    n_pos = int(pos.sum())
    n_neg = y_true.size - n_pos
    ranks = rankdata(scores)  # average ranks, so ties count 1/2
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


METRICS = {"rmse": rmse, "relative_error": relative_error, "accuracy": accuracy, "auc": roc_auc}


def evaluate(y_true, y_pred, metrics=("rmse",)) -> dict:
    """Compute the named metrics; unknown names raise ``ValueError``."""
    out = {}
    for name in metrics:
        if name not in METRICS:
            raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRICS)}")
        out[name] = METRICS[name](y_true, y_pred)
    return out
