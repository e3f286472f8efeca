"""Adam training loop, learning-rate selection and threshold calibration."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, fields
from typing import NamedTuple

import numpy as np

from .data import Dataset, ExposureTable
from .metrics import balanced_accuracy
from .model import CUTOFF_FLOOR, SCALARS, TRAINABLE, ModelParams, batch_loss, forward, gradients

log = logging.getLogger(__name__)

DEFAULT_LR_GRID = (5e-5, 2e-4, 7.5e-4, 1e-3)


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dim: int = 64
    epochs: int = 100
    lr_grid: tuple = DEFAULT_LR_GRID
    batch_size: int = 512
    l2_weight: float = 1e-4
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.lr_grid = tuple(float(x) for x in self.lr_grid)
        if self.dim < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("dim, epochs and batch_size must be >= 1")
        if not self.lr_grid or any(lr <= 0 for lr in self.lr_grid):
            raise ConfigError("lr_grid must be a non-empty set of positive values")
        if self.l2_weight < 0:
            raise ConfigError("l2_weight must be >= 0")

    def items(self):
        for f in fields(self):
            v = getattr(self, f.name)
            yield f.name, ",".join(repr(x) for x in v) if f.name == "lr_grid" else repr(v)

    @classmethod
    def parse(cls, text: str, **overrides) -> "TrainConfig":
        """Parse ``key=value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                if key == "lr_grid":
                    values[key] = tuple(float(x) for x in value.split(",") if x.strip())
                elif types[key] in ("int", int):
                    values[key] = int(value)
                else:
                    values[key] = float(value)
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from None
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read(), **overrides)

    def dump(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())


def init_params(config: TrainConfig, n_users: int, n_items: int, seed=None) -> ModelParams:
    if n_users < 1 or n_items < 1:
        raise ValueError("need at least one user and one item")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    return ModelParams(
        user_emb=rng.standard_normal((n_users, config.dim)),
        item_emb=rng.standard_normal((n_items, config.dim)),
        lam=0.0,
        lam_user=np.zeros(n_users),
        cutoff=3.0,
        alpha=1.0,
        beta=-0.0065,
        gamma=0.5,
        user_bias=np.zeros(n_users),
        item_bias=np.zeros(n_items),
    )


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict, state: OptimizerState, lr: float) -> None:
    """One bias-corrected Adam update, in place, followed by ``c >= 1e-3``."""
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for name in TRAINABLE:
        g = np.asarray(grads[name], dtype=np.float64)
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        delta = lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        if name in SCALARS:
            setattr(params, name, float(getattr(params, name) - delta))
        else:
            getattr(params, name)[...] -= delta
    params.cutoff = max(params.cutoff, CUTOFF_FLOOR)


def calibrate_threshold(scores, labels) -> float:
    """Threshold maximising balanced accuracy of ``score > threshold``.

    Candidates are the midpoints between consecutive distinct finite scores,
    plus 0 and 1, plus one value below and one above the finite scores when
    they leave [0, 1]. Ties go to the smallest threshold.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    pos, neg = np.sort(scores[labels == 1]), np.sort(scores[labels == 0])
    if not len(pos) or not len(neg):
        raise ValueError("calibration needs both positive and negative labels")
    finite = np.unique(scores[np.isfinite(scores)])
    cands = [0.0, 1.0]
    if len(finite):
        cands.extend((finite[:-1] + finite[1:]) / 2)
        if finite[0] <= 0 or np.isneginf(scores).any():
            cands.append(finite[0] - 1.0)
        if finite[-1] >= 1:
            cands.append(finite[-1] + 1.0)
    cands = np.unique(np.asarray(cands, dtype=np.float64))
    tpr = (len(pos) - np.searchsorted(pos, cands, side="right")) / len(pos)
    tnr = np.searchsorted(neg, cands, side="right") / len(neg)
    ba = 0.5 * (tpr + tnr)
    return float(cands[int(np.argmax(ba))])


def _ba_at(scores, labels, threshold):
    return balanced_accuracy(labels, scores > threshold)


class TrainResult(NamedTuple):
    params: ModelParams
    threshold: float
    lr: float
    epoch: int
    val_balanced_accuracy: float
    log: list
    events: list


LOG_HEADER = ("epoch", "lr", "train_loss", "val_balanced_accuracy", "threshold")


def write_log(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in rows:
            w.writerow((r["epoch"], repr(r["lr"]), repr(r["train_loss"]),
                        repr(r["val_balanced_accuracy"]), repr(r["threshold"])))


def run_epoch(params, state, table: ExposureTable, lr, config: TrainConfig, rng) -> tuple[float, int]:
    """One shuffled pass of minibatch Adam; returns (mean batch loss, steps)."""
    order = rng.permutation(len(table))
    losses = []
    for lo in range(0, len(order), config.batch_size):
        batch = table.batch(order[lo:lo + config.batch_size])
        # overflow is reported as divergence below, not as a numpy warning
        with np.errstate(over="ignore", invalid="ignore"):
            trace = forward(params, batch)
            loss = batch_loss(params, batch, config.l2_weight, trace)
        if not math.isfinite(loss):
            return math.nan, len(losses)
        losses.append(loss)
        adam_step(params, gradients(params, batch, config.l2_weight, trace), state, lr)
    return float(np.mean(losses)), len(losses)


def train(train_data: Dataset, validation: Dataset, config: TrainConfig) -> TrainResult:
    """Grid over learning rates; keep the (lr, epoch) with best validation
    balanced accuracy, together with its calibrated threshold."""
    if len(validation) == 0:
        raise ValueError("validation set is empty")
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    val_labels = validation.label.astype(np.int64)
    if val_labels.min() == val_labels.max():
        raise ValueError("validation labels contain a single class")
    table = ExposureTable(train_data)
    val_batch = ExposureTable(validation).batch()
    rows, events = [], []
    best = None
    for lr_idx, lr in enumerate(config.lr_grid):
        params = init_params(config, train_data.n_users, train_data.n_items)
        state = OptimizerState(config.adam_beta1, config.adam_beta2, config.adam_eps)
        for epoch in range(1, config.epochs + 1):
            rng = np.random.default_rng([config.seed, lr_idx, epoch])
            loss, _ = run_epoch(params, state, table, lr, config, rng)
            if math.isfinite(loss):
                scores = forward(params, val_batch).score
            if not math.isfinite(loss) or not np.all(np.isfinite(scores)):
                msg = f"lr={lr!r} diverged at epoch {epoch}; abandoning this learning rate"
                log.warning(msg)
                events.append(msg)
                break
            thr = calibrate_threshold(scores, val_labels)
            ba = _ba_at(scores, val_labels, thr)
            rows.append({"epoch": epoch, "lr": lr, "train_loss": loss,
                         "val_balanced_accuracy": ba, "threshold": thr})
            log.debug("lr=%g epoch=%d loss=%.5f val_ba=%.4f", lr, epoch, loss, ba)
            if best is None or ba > best[0]:
                best = (ba, params.copy(), thr, lr, epoch)
    if best is None:
        raise RuntimeError("every learning rate diverged")
    ba, params, thr, lr, epoch = best
    return TrainResult(params, thr, lr, epoch, ba, rows, events)
