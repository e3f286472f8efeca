"""Power-law memory activations over a history of past consumptions.

Two flavours share the same shape:

* ``base_level``: ACT-R base-level activation, ``ln sum (t - t_j)^-d``.
* ``exposure_kernel``: the same sum without the log and with a cutoff ``c``
  added to every gap, ``sum (t - t_j + c)^-d``. It is bounded by ``n * c^-d``.

Only strictly earlier events (``t_j < t``) contribute. Sums run left to right
over the history, so padding a history with masked entries never changes the
result and the single-history functions agree bit for bit with the batched
ones they delegate to.
"""
import math

import numpy as np

DEFAULT_DECAY = 0.5
NO_ACTIVATION = -math.inf


def _as_row(history):
    hist = np.asarray(history, dtype=np.float64).reshape(1, -1)
    return hist, np.ones(hist.shape, dtype=bool)


def exposure_kernel(history, t: float, c: float, d: float = DEFAULT_DECAY) -> float:
    if c <= 0 or d <= 0:
        raise ValueError("cutoff and decay must be positive")
    hist, mask = _as_row(history)
    return float(exposure_kernel_batch(hist, mask, [t], c, d)[0])


def base_level(history, t: float, d: float = DEFAULT_DECAY) -> float:
    """Base-level activation; ``-inf`` when no event precedes ``t``."""
    if d <= 0:
        raise ValueError("decay must be positive")
    hist, mask = _as_row(history)
    return float(base_level_batch(hist, mask, [t], d)[0])


def exposure_kernel_batch(hist, mask, t, c, d=DEFAULT_DECAY, with_grad=False):
    """Row-wise exposure kernel over padded histories.

    Returns the kernel values, plus their derivative with respect to ``c``
    when ``with_grad`` is set.
    """
    hist = np.asarray(hist, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    active = np.asarray(mask, dtype=bool) & (t[:, None] > hist)
    gap = np.where(active, t[:, None] - hist + c, 1.0)
    term = np.where(active, gap ** -d, 0.0)
    value = np.zeros(len(t))
    for j in range(term.shape[1]):
        value += term[:, j]
    if not with_grad:
        return value
    dterm = np.where(active, -d * gap ** (-d - 1.0), 0.0)
    dvalue = np.zeros(len(t))
    for j in range(dterm.shape[1]):
        dvalue += dterm[:, j]
    return value, dvalue


def base_level_batch(hist, mask, t, d=DEFAULT_DECAY):
    """Row-wise base-level activation; rows with no earlier event get ``-inf``."""
    hist = np.asarray(hist, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    active = np.asarray(mask, dtype=bool) & (t[:, None] > hist)
    gap = np.where(active, t[:, None] - hist, 1.0)
    term = np.where(active, gap ** -d, 0.0)
    total = np.zeros(len(t))
    for j in range(term.shape[1]):
        total += term[:, j]
    out = np.full(len(t), NO_ACTIVATION)
    seen = active.any(axis=1)
    out[seen] = np.log(total[seen])
    return out
