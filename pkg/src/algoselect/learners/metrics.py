"""Scoring functions used for model selection."""

import numpy as np


def r2(y_true, y_pred) -> float:
    """Coefficient of determination.

    With a constant target the score is 1 for a perfect prediction and 0
    otherwise, instead of dividing by zero.
    """
    y = np.asarray(y_true, dtype=float)
    yhat = np.asarray(y_pred, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("y_true and y_pred must be non-empty and the same shape")
    ss_res = float(np.sum((y - yhat) ** 2))
    # tested on the values: the float mean of a constant vector need not equal it
    if np.all(y == y[0]):
        return 1.0 if ss_res == 0.0 else 0.0
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - ss_res / ss_tot


def f1_macro(y_true, y_pred, labels=None) -> float:
    """Unweighted mean of per-class F1.

    Averages over the classes of ``labels`` (default: all) that occur in
    either argument; classes absent from both are skipped.  A class with a
    zero precision or recall denominator scores 0.
    """
    y = np.asarray(y_true, dtype=object)
    yhat = np.asarray(y_pred, dtype=object)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("y_true and y_pred must be non-empty and the same shape")
    present = set(y.tolist()) | set(yhat.tolist())
    labels = sorted(present, key=repr) if labels is None else [c for c in labels if c in present]
    scores = []
    for c in labels:
        tp = float(np.sum((y == c) & (yhat == c)))
        fp = float(np.sum((y != c) & (yhat == c)))
        fn = float(np.sum((y == c) & (yhat != c)))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores)) if scores else 0.0
