"""Baselines and the multi-split evaluation harness.

Models compared on every held-out exposure:

* ``Ex2Vec``: trained model, threshold calibrated on validation.
* ``BL``: base-level activation with d=0.5, threshold calibrated on validation.
* ``BL_fit``: base-level activation with d grid-searched on validation.
* ``Prev``: repeat the previous exposure's outcome.
"""
from __future__ import annotations

import csv
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, ExposureTable, holdout_split
from .kernels import DEFAULT_DECAY, base_level, base_level_batch
from .metrics import balanced_accuracy, weighted_f1
from .model import predict
from .trainer import TrainConfig, calibrate_threshold, train

MODELS = ("Ex2Vec", "BL", "BL_fit", "Prev")
DECAY_GRID = tuple(round(0.05 * k, 2) for k in range(1, 31))


def prev_predict(labels) -> np.ndarray:
    """Previous exposure's label; the first exposure is predicted as a listen."""
    labels = np.asarray(labels, dtype=np.int8)
    if labels.size == 0:
        raise ValueError("empty sequence")
    out = np.empty_like(labels)
    out[0] = 1
    out[1:] = labels[:-1]
    return out


def prev_predict_table(table: ExposureTable) -> np.ndarray:
    """:func:`prev_predict` applied to every pair of an exposure table."""
    out = np.empty(len(table), dtype=np.int8)
    first = table.exposure_index == 1
    out[first] = 1
    out[1:][~first[1:]] = table.label[:-1][~first[1:]]
    return out


def bl_score(history, t: float, d: float = DEFAULT_DECAY) -> float:
    return base_level(history, t, d)


def bl_scores(table: ExposureTable, d: float = DEFAULT_DECAY) -> np.ndarray:
    b = table.batch()
    return base_level_batch(b.hist, b.mask, b.t, d)


def fit_decay(table: ExposureTable, grid=DECAY_GRID) -> tuple[float, float]:
    """Decay maximising validation balanced accuracy of the base-level score.

    Returns ``(d, balanced_accuracy)``; ties keep the smallest d.
    """
    labels = table.label.astype(np.int64)
    best = None
    batch = table.batch()
    for d in sorted(grid):
        scores = base_level_batch(batch.hist, batch.mask, batch.t, d)
        thr = calibrate_threshold(scores, labels)
        ba = balanced_accuracy(labels, scores > thr)
        if best is None or ba > best[1]:
            best = (float(d), ba)
    return best


@dataclass
class EvalReport:
    seeds: list
    scores: dict = field(default_factory=dict)  # model -> list of (ba, wf1) per seed
    details: list = field(default_factory=list)

    def mean_std(self, model: str, metric: int = 0) -> tuple[float, float]:
        vals = [s[metric] for s in self.scores[model]]
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        return statistics.fmean(vals), std

    def rows(self):
        for model in self.scores:
            for seed, (ba, wf1) in zip(self.seeds, self.scores[model]):
                yield model, str(seed), ba, wf1
        for model in self.scores:
            (ba, _), (wf1, _) = self.mean_std(model, 0), self.mean_std(model, 1)
            yield model, "mean", ba, wf1
            yield model, "std", self.mean_std(model, 0)[1], self.mean_std(model, 1)[1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("model", "seed", "balanced_accuracy", "weighted_f1"))
            for model, seed, ba, wf1 in self.rows():
                w.writerow((model, seed, repr(ba), repr(wf1)))

    def table(self) -> str:
        lines = [f"{'Model':<8}  {'Balanced Accuracy (%)':>22}  {'Weighted F1 (%)':>18}"]
        for model in self.scores:
            ba, ba_sd = self.mean_std(model, 0)
            f1, f1_sd = self.mean_std(model, 1)
            lines.append(f"{model:<8}  {100 * ba:>13.2f} ± {100 * ba_sd:<6.2f}  "
                         f"{100 * f1:>9.2f} ± {100 * f1_sd:<6.2f}")
        return "\n".join(lines)


def evaluate_split(dataset: Dataset, seed: int, config: TrainConfig) -> dict:
    """Train and score every model on one holdout split."""
    split = holdout_split(dataset, seed)
    val = ExposureTable(dataset.select_pairs(split.validation))
    test = ExposureTable(dataset.select_pairs(split.test))
    y_test = test.label.astype(np.int64)
    y_val = val.label.astype(np.int64)

    cfg = TrainConfig(**{**config.__dict__, "seed": seed})
    result = train(split.train, val.dataset, cfg)
    preds = {"Ex2Vec": predict(result.params, test.batch()) > result.threshold}

    bl_thr = calibrate_threshold(bl_scores(val), y_val)
    preds["BL"] = bl_scores(test) > bl_thr

    d_fit, _ = fit_decay(val)
    fit_thr = calibrate_threshold(bl_scores(val, d_fit), y_val)
    preds["BL_fit"] = bl_scores(test, d_fit) > fit_thr

    preds["Prev"] = prev_predict_table(test)
    out = {m: (balanced_accuracy(y_test, p), weighted_f1(y_test, p)) for m, p in preds.items()}
    out["_info"] = {"seed": seed, "lr": result.lr, "epoch": result.epoch,
                    "threshold": result.threshold, "d_fit": d_fit,
                    "val_balanced_accuracy": result.val_balanced_accuracy,
                    "n_test": len(test), "log": result.log}
    return out


def evaluate_models(dataset: Dataset, seeds=(0, 1, 2, 3, 4), config: TrainConfig | None = None,
                    threads: int = 1) -> EvalReport:
    """Average every model's test metrics over independent holdout splits."""
    config = config or TrainConfig()
    seeds = list(seeds)
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(lambda s: evaluate_split(dataset, s, config), seeds))
    else:
        results = [evaluate_split(dataset, s, config) for s in seeds]
    report = EvalReport(seeds)
    for model in MODELS:
        report.scores[model] = [r[model] for r in results]
    report.details = [r["_info"] for r in results]
    return report
