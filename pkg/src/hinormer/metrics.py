"""Micro/Macro F1 for multi-class and multi-label predictions."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass
class Metrics:
    micro_f1: float
    macro_f1: float
    loss: float = 0.0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.where(denom > 0, denom, 1), 0.0)


def f1_scores(y_true, y_pred, multilabel: bool = False) -> tuple[float, float]:
    """``(micro, macro)`` F1.

    Multi-class: macro averages over the classes present in ``y_true`` or
    ``y_pred``. Multi-label (0/1 matrices): macro averages over all columns,
    with F1 = 0 for a column that has neither positives nor predictions.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"shape mismatch: {y_true.shape} vs {y_pred.shape}")
    if len(y_true) == 0:
        raise ValueError("cannot score an empty split")
    if multilabel:
        t, p = y_true.astype(bool), y_pred.astype(bool)
        tp = (t & p).sum(axis=0)
        fp = (~t & p).sum(axis=0)
        fn = (t & ~p).sum(axis=0)
    else:
        classes = np.union1d(y_true, y_pred)
        tp = np.array([np.sum((y_true == c) & (y_pred == c)) for c in classes])
        fp = np.array([np.sum((y_true != c) & (y_pred == c)) for c in classes])
        fn = np.array([np.sum((y_true == c) & (y_pred != c)) for c in classes])
    micro = float(_f1(tp.sum(), fp.sum(), fn.sum()))
    macro = float(np.mean(_f1(tp, fp, fn)))
    return micro, macro
