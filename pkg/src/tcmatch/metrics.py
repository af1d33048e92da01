"""Confusion matrices and F1 scores."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .exceptions import ShapeError


def confusion_matrix(true_idx: Sequence[int], pred_idx: Sequence[int], n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true_idx, dtype=np.int64), np.asarray(pred_idx, dtype=np.int64)), 1)
    return cm


def _check(confusion) -> np.ndarray:
    cm = np.asarray(confusion)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got shape {cm.shape}")
    if (cm < 0).any():
        raise ValueError("confusion matrix entries must be non-negative")
    return cm


def per_class_f1(confusion) -> np.ndarray:
    """F1 per class; a class with no true and no predicted members scores 0."""
    cm = _check(confusion).astype(np.float64)
    tp = np.diag(cm)
    denom = cm.sum(axis=0) + cm.sum(axis=1)
    return np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)


def macro_f1(confusion) -> float:
    return float(per_class_f1(confusion).mean())


def micro_f1(confusion) -> float:
    cm = _check(confusion).astype(np.float64)
    tp = np.trace(cm)
    fp = cm.sum() - tp  # every off-diagonal count is one FP and one FN
    denom = 2 * tp + 2 * fp
    return float(2 * tp / denom) if denom else 0.0


def accuracy(confusion) -> float:
    cm = _check(confusion)
    total = cm.sum()
    return float(np.trace(cm) / total) if total else 0.0
