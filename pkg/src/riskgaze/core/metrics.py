from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import confusion_matrix as _sk_confusion

from .errors import EmptyTrueClass
from .models import TrialResult

N_CLASSES = 3


def confusion(y_true, y_pred, n_classes: int = N_CLASSES,
              labels: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Rows = true class, columns = predicted class, over `labels` when given
    (the classes present in the data) or else 0..n_classes-1.
    """
    labels = range(n_classes) if labels is None else labels
    return _sk_confusion(y_true, y_pred, labels=[int(k) for k in labels])


def per_class_recall(cm) -> np.ndarray:
    cm = np.asarray(cm, dtype=float)
    true_counts = cm.sum(axis=1)
    if np.any(true_counts == 0):
        empty = [int(k) for k in np.flatnonzero(true_counts == 0)]
        raise EmptyTrueClass(f"no test samples for class(es) {empty}")
    return np.diag(cm) / true_counts


def balanced_accuracy(cm) -> float:
    return float(per_class_recall(cm).mean())


def mcc_multiclass(cm) -> float:
    """
    K-class correlation coefficient:

        (c*s - sum_k p_k t_k) / sqrt((s^2 - sum p_k^2) (s^2 - sum t_k^2))

    c correct, s total, p_k predicted counts, t_k true counts.
    A zero denominator (one predicted or one true class) gives 0.
    """
    cm = np.asarray(cm, dtype=float)
    s = cm.sum()
    if s <= 0:
        raise ValueError("confusion matrix is empty")
    c = np.trace(cm)
    t = cm.sum(axis=1)
    p = cm.sum(axis=0)

    num = c * s - p @ t
    den_sq = (s * s - p @ p) * (s * s - t @ t)
    if den_sq <= 0:
        return 0.0
    return float(np.clip(num / math.sqrt(den_sq), -1.0, 1.0))


def compute_metrics(y_true, y_pred, n_classes: int = N_CLASSES,
                    labels: Optional[Sequence[int]] = None) -> Dict[str, object]:
    cm = confusion(y_true, y_pred, n_classes, labels)
    return {
        "balanced_accuracy": balanced_accuracy(cm),
        "mcc": mcc_multiclass(cm),
        "confusion": cm.astype(int).tolist(),
    }


def aggregate_trials(trials: Sequence[TrialResult]) -> Dict[str, float]:
    """
    Mean / std (population) of balanced accuracy and mean MCC. Recomputing
    from the stored trials always gives the same numbers.
    """
    if not trials:
        return {"avg_accuracy": 0.0, "std_accuracy": 0.0, "avg_mcc": 0.0}
    acc = np.array([t.balanced_accuracy for t in trials], dtype=float)
    mcc = np.array([t.mcc for t in trials], dtype=float)
    return {
        "avg_accuracy": float(acc.mean()),
        "std_accuracy": float(acc.std()),
        "avg_mcc": float(mcc.mean()),
    }


def class_counts(y, n_classes: int = N_CLASSES) -> List[int]:
    return np.bincount(np.asarray(y, dtype=int), minlength=n_classes).tolist()
