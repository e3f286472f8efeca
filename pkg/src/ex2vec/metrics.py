"""Binary classification metrics used for model selection and reporting."""
import numpy as np


def _check(true, pred):
    true = np.asarray(true).astype(np.int64)
    pred = np.asarray(pred).astype(np.int64)
    if true.shape != pred.shape:
        raise ValueError("true and pred differ in shape")
    if not ((true == 0).any() and (true == 1).any()):
        raise ValueError("both classes must be present in the true labels")
    return true, pred


def confusion(true, pred):
    """Return ``(tp, fp, tn, fn)``."""
    true, pred = _check(true, pred)
    tp = int(np.sum((true == 1) & (pred == 1)))
    fp = int(np.sum((true == 0) & (pred == 1)))
    tn = int(np.sum((true == 0) & (pred == 0)))
    fn = int(np.sum((true == 1) & (pred == 0)))
    return tp, fp, tn, fn


def balanced_accuracy(true, pred) -> float:
    tp, fp, tn, fn = confusion(true, pred)
    return 0.5 * (tp / (tp + fn) + tn / (tn + fp))


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def weighted_f1(true, pred) -> float:
    """Per-class F1 averaged with weights equal to each class's support."""
    tp, fp, tn, fn = confusion(true, pred)
    n = tp + fp + tn + fn
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    return ((tp + fn) * f1_pos + (tn + fp) * f1_neg) / n
