"""Precision / recall / F1 for integer class labels."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

AVERAGES = ("macro", "micro", "weighted")


def _check(y_true, y_pred):
    y_true = np.asarray(y_true, dtype=np.int64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.int64).ravel()
    if y_true.shape != y_pred.shape:
        raise ShapeError(f"label vectors differ in length: {y_true.size} vs {y_pred.size}")
    if y_true.size == 0:
        raise ShapeError("label vectors must be non-empty")
    return y_true, y_pred


def confusion_matrix(y_true, y_pred, n_classes=None) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    y_true, y_pred = _check(y_true, y_pred)
    k = n_classes or int(max(y_true.max(), y_pred.max())) + 1
    return np.bincount(y_true * k + y_pred, minlength=k * k).reshape(k, k)


def _f1(tp, fp, fn):
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


def f1_per_class(y_true, y_pred, c: int) -> float:
    """F1 of class ``c``; an undefined precision or recall counts as 0."""
    y_true, y_pred = _check(y_true, y_pred)
    tp = int(np.sum((y_true == c) & (y_pred == c)))
    fp = int(np.sum((y_true != c) & (y_pred == c)))
    fn = int(np.sum((y_true == c) & (y_pred != c)))
    return _f1(tp, fp, fn)


def f1_score(y_true, y_pred, average: str = "macro") -> float:
    """Multiclass F1.

    ``macro`` is the unweighted mean of per-class F1 over the classes present
    in ``y_true``; ``weighted`` weights those by support; ``micro`` pools the
    counts (and equals accuracy for single-label data).
    """
    if average not in AVERAGES:
        raise ValueError(f"unknown average {average!r}; expected one of {AVERAGES}")
    y_true, y_pred = _check(y_true, y_pred)
    cm = confusion_matrix(y_true, y_pred)
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    present = np.flatnonzero(cm.sum(axis=1) > 0)
    if average == "micro":
        return _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    scores = np.array([_f1(int(tp[c]), int(fp[c]), int(fn[c])) for c in present])
    if average == "weighted":
        support = cm.sum(axis=1)[present]
        return float(np.dot(scores, support) / support.sum())
    return float(scores.mean())


def f1_macro(y_true, y_pred) -> float:
    return f1_score(y_true, y_pred, "macro")
