"""Per-exposure curves by repetition class.

* listen fraction at the j-th exposure, with a Wilson 95% interval;
* median gap (hours) between consecutive listens, with a bootstrap interval;
* median base-level activation at each listen after the first, likewise.

For the gap and activation curves ``j`` counts listens (the j-th ``L=1`` event
of the pair) and each class keeps only its most popular sequence length.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import (
    POPULAR_LENGTHS, REPETITION_CLASSES, SECONDS_PER_HOUR, Dataset, RepetitionClass,
    assign_repetition_class,
)
from .kernels import DEFAULT_DECAY, base_level

N_BOOTSTRAP = 1000
Z95 = 1.959963984540054
CURVE_HEADER = ("class", "exposure", "value", "ci_low", "ci_high", "n")


@dataclass(frozen=True)
class CurvePoint:
    repetition_class: RepetitionClass
    exposure_index: int
    value: float
    ci_low: float
    ci_high: float
    n: int


def pair_classes(dataset: Dataset) -> np.ndarray:
    """Repetition class of every event's pair (by total exposures)."""
    lengths = dataset.pair_lengths()
    classes = np.array([assign_repetition_class(int(n)) for n in lengths], dtype=object)
    return classes[np.cumsum(dataset.pair_starts()) - 1] if len(dataset) else classes


def _hours(dataset: Dataset) -> float:
    return 1.0 if dataset.time_unit == "hours" else 1.0 / SECONDS_PER_HOUR


def _wilson(k: int, n: int) -> tuple[float, float]:
    p = k / n
    denom = 1 + Z95 ** 2 / n
    centre = (p + Z95 ** 2 / (2 * n)) / denom
    half = Z95 * np.sqrt(p * (1 - p) / n + Z95 ** 2 / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def listen_fraction_curve(dataset: Dataset, popular_only: bool = False) -> list[CurvePoint]:
    """Share of pairs that listened at their j-th exposure, per class."""
    classes = pair_classes(dataset)
    exp_idx = dataset.exposure_index()
    lengths = dataset.pair_lengths()[np.cumsum(dataset.pair_starts()) - 1]
    out = []
    for cls in REPETITION_CLASSES:
        sel = classes == cls
        if popular_only:
            sel &= lengths == POPULAR_LENGTHS[cls]
        if not sel.any():
            continue
        idx, lab = exp_idx[sel], dataset.label[sel]
        n = np.bincount(idx)
        k = np.bincount(idx, weights=lab)
        for j in range(1, len(n)):
            if n[j]:
                lo, hi = _wilson(int(k[j]), int(n[j]))
                out.append(CurvePoint(cls, j, k[j] / n[j], lo, hi, int(n[j])))
    return out


def _listen_sequences(dataset: Dataset, cls: RepetitionClass):
    """Listen times (hours) of every pair with the class's popular length."""
    starts = np.flatnonzero(dataset.pair_starts())
    lengths = dataset.pair_lengths()
    scale = _hours(dataset)
    for s, n in zip(starts, lengths):
        if n != POPULAR_LENGTHS[cls]:
            continue
        lab = dataset.label[s:s + n] == 1
        yield dataset.t[s:s + n][lab] * scale


def _bootstrap_median(values: np.ndarray, rng) -> tuple[float, float, float]:
    med = float(np.median(values))
    samples = values[rng.integers(0, len(values), size=(N_BOOTSTRAP, len(values)))]
    lo, hi = np.percentile(np.median(samples, axis=1), [2.5, 97.5])
    # percentile bounds can miss a tied median by rounding; keep the bracket
    return med, min(float(lo), med), max(float(hi), med)


def _median_curve(cells: dict, cls, seed: int) -> list[CurvePoint]:
    out = []
    for j in sorted(cells):
        vals = np.asarray(cells[j], dtype=np.float64)
        rng = np.random.default_rng([seed, REPETITION_CLASSES.index(cls), j])
        med, lo, hi = _bootstrap_median(vals, rng)
        out.append(CurvePoint(cls, j, med, lo, hi, len(vals)))
    return out


def median_gap_curve(dataset: Dataset, seed: int = 0) -> list[CurvePoint]:
    """Median hours between the (j-1)-th and j-th listen, j >= 2."""
    out = []
    for cls in REPETITION_CLASSES:
        cells: dict = {}
        for times in _listen_sequences(dataset, cls):
            for j, gap in enumerate(np.diff(times), start=2):
                cells.setdefault(j, []).append(gap)
        out.extend(_median_curve(cells, cls, seed))
    return out


def median_activation_curve(dataset: Dataset, d: float = DEFAULT_DECAY, seed: int = 0) -> list[CurvePoint]:
    """Median base-level activation at the j-th listen over the earlier ones, j >= 2."""
    out = []
    for cls in REPETITION_CLASSES:
        cells: dict = {}
        for times in _listen_sequences(dataset, cls):
            for j in range(1, len(times)):
                cells.setdefault(j + 1, []).append(base_level(times[:j], times[j], d))
        out.extend(_median_curve(cells, cls, seed))
    return out


def write_curve(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_HEADER)
        for p in points:
            w.writerow((p.repetition_class.value, p.exposure_index, repr(float(p.value)),
                        repr(float(p.ci_low)), repr(float(p.ci_high)), p.n))
