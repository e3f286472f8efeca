"""Ex2Vec forward pass, log loss and its analytic gradient.

For a user ``u``, item ``i`` and time ``t`` the model computes::

    base      = ||u - v||
    lam_u     = max(lam + lam_user[u], 0)
    eff       = max(base - lam_u * sum_j (t - t_j + c)^-d, 0)
    interest  = alpha * eff + beta * eff**2 + gamma + user_bias[u] + item_bias[i]
    score     = sigmoid(interest)

where ``t_j`` are the pair's earlier consumptions. Clamps use a zero
subgradient on their flat side. The step-size clamp is the exception at its
kink: ``lam + lam_user[u] == 0`` takes the right derivative, otherwise a model
initialised with ``lam = 0`` could never start learning it.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data import Batch
from .kernels import DEFAULT_DECAY, exposure_kernel_batch

SCORE_EPS = 1e-7
NORM_EPS = 1e-8
CUTOFF_FLOOR = 1e-3

TRAINABLE = (
    "user_emb", "item_emb", "lam", "lam_user", "cutoff",
    "alpha", "beta", "gamma", "user_bias", "item_bias",
)
SCALARS = ("lam", "cutoff", "alpha", "beta", "gamma")


@dataclass
class ModelParams:
    user_emb: np.ndarray
    item_emb: np.ndarray
    lam: float
    lam_user: np.ndarray
    cutoff: float
    alpha: float
    beta: float
    gamma: float
    user_bias: np.ndarray
    item_bias: np.ndarray
    decay: float = DEFAULT_DECAY

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    @property
    def n_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_emb.shape[0]

    def copy(self) -> "ModelParams":
        return replace(self, **{
            f.name: np.array(getattr(self, f.name), copy=True)
            for f in fields(self) if isinstance(getattr(self, f.name), np.ndarray)
        })

    def allclose(self, other: "ModelParams", **kw) -> bool:
        return all(np.allclose(getattr(self, n), getattr(other, n), **kw) for n in TRAINABLE + ("decay",))

    def equals(self, other: "ModelParams") -> bool:
        return all(np.array_equal(getattr(self, n), getattr(other, n)) for n in TRAINABLE + ("decay",))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def base_distance(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: {u.shape[-1]} vs {v.shape[-1]}")
    diff = u - v
    return np.sqrt(np.sum(diff * diff, axis=-1))


def interest(params: ModelParams, eff, user, item):
    """Quadratic interest in the effective distance."""
    eff = np.asarray(eff, dtype=np.float64)
    return (params.alpha * eff + params.beta * eff * eff + params.gamma
            + params.user_bias[user] + params.item_bias[item])


def user_step_size(params: ModelParams, user):
    return np.maximum(params.lam + params.lam_user[user], 0.0)


class ForwardTrace(NamedTuple):
    diff: np.ndarray
    base_dist: np.ndarray
    kernel_value: np.ndarray
    kernel_dc: np.ndarray
    lam_raw: np.ndarray
    lam_u: np.ndarray
    pre_clamp: np.ndarray
    effective_dist: np.ndarray
    clamped: np.ndarray
    interest: np.ndarray
    score: np.ndarray


def forward(params: ModelParams, batch: Batch) -> ForwardTrace:
    diff = params.user_emb[batch.user] - params.item_emb[batch.item]
    base = np.sqrt(np.sum(diff * diff, axis=1))
    kern, kern_dc = exposure_kernel_batch(batch.hist, batch.mask, batch.t,
                                          params.cutoff, params.decay, with_grad=True)
    lam_raw = params.lam + params.lam_user[batch.user]
    lam_u = np.maximum(lam_raw, 0.0)
    pre = base - lam_u * kern
    eff = np.maximum(pre, 0.0)
    x = interest(params, eff, batch.user, batch.item)
    return ForwardTrace(diff, base, kern, kern_dc, lam_raw, lam_u, pre, eff, pre < 0, x, sigmoid(x))


def effective_distance(params: ModelParams, user: int, item: int, history, t: float) -> float:
    from .data import make_batch

    return float(forward(params, make_batch([(user, item, history, t, 0)])).effective_dist[0])


def predict(params: ModelParams, batch: Batch) -> np.ndarray:
    return forward(params, batch).score


def _touched(idx):
    return np.unique(idx)


def batch_loss(params: ModelParams, batch: Batch, l2_weight: float = 0.0, trace=None) -> float:
    """Mean clipped log loss plus L2 on the embedding rows the batch touches."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if trace is None:
        trace = forward(params, batch)
    s = np.clip(trace.score, SCORE_EPS, 1.0 - SCORE_EPS)
    y = batch.label
    bce = -(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))
    loss = float(np.mean(bce))
    if l2_weight:
        ue = params.user_emb[_touched(batch.user)]
        ie = params.item_emb[_touched(batch.item)]
        loss += l2_weight * float(np.sum(ue * ue) + np.sum(ie * ie))
    return loss


def gradients(params: ModelParams, batch: Batch, l2_weight: float = 0.0, trace=None) -> dict:
    """Exact gradient of :func:`batch_loss` keyed by trainable parameter name."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    if trace is None:
        trace = forward(params, batch)
    n = len(batch)
    s, y = trace.score, batch.label
    inside = (s >= SCORE_EPS) & (s <= 1.0 - SCORE_EPS)
    g_x = np.where(inside, (s - y) / n, 0.0)

    eff = trace.effective_dist
    g = {
        "alpha": float(np.sum(g_x * eff)),
        "beta": float(np.sum(g_x * eff * eff)),
        "gamma": float(np.sum(g_x)),
    }
    g["user_bias"] = np.bincount(batch.user, weights=g_x, minlength=params.n_users)
    g["item_bias"] = np.bincount(batch.item, weights=g_x, minlength=params.n_items)

    g_pre = np.where(trace.pre_clamp > 0, g_x * (params.alpha + 2.0 * params.beta * eff), 0.0)
    g_lam_raw = np.where(trace.lam_raw >= 0, -g_pre * trace.kernel_value, 0.0)
    g["lam"] = float(np.sum(g_lam_raw))
    g["lam_user"] = np.bincount(batch.user, weights=g_lam_raw, minlength=params.n_users)
    g["cutoff"] = float(np.sum(-g_pre * trace.lam_u * trace.kernel_dc))

    base = trace.base_dist
    safe = base >= NORM_EPS
    coef = np.where(safe, g_pre / np.where(safe, base, 1.0), 0.0)
    g_diff = coef[:, None] * trace.diff
    g_user = np.zeros_like(params.user_emb)
    g_item = np.zeros_like(params.item_emb)
    np.add.at(g_user, batch.user, g_diff)
    np.add.at(g_item, batch.item, -g_diff)
    if l2_weight:
        tu, ti = _touched(batch.user), _touched(batch.item)
        g_user[tu] += 2.0 * l2_weight * params.user_emb[tu]
        g_item[ti] += 2.0 * l2_weight * params.item_emb[ti]
    g["user_emb"] = g_user
    g["item_emb"] = g_item
    return g


def interest_profile(params: ModelParams, user: int, kernel_value: float = 0.0):
    """Effective distance and interest of one user towards every item, for a
    given exposure-kernel level (0 means no prior consumption)."""
    base = base_distance(params.user_emb[user][None, :], params.item_emb)
    lam_u = max(params.lam + params.lam_user[user], 0.0)
    eff = np.maximum(base - lam_u * kernel_value, 0.0)
    users = np.full(params.n_items, user)
    return eff, interest(params, eff, users, np.arange(params.n_items))


# --- checkpoint bundle -------------------------------------------------------
#
# A checkpoint is a directory with three CSV files, floats written with 17
# significant digits so a save/load round trip is exact:
#   meta.csv   key,value   (n_users, n_items, dim, decay, threshold, scalars)
#   users.csv  user_idx,lam_user,user_bias,e0..e{D-1}
#   items.csv  item_idx,item_bias,e0..e{D-1}

def _fmt(x) -> str:
    return format(float(x), ".17g")


def save_checkpoint(params: ModelParams, path, threshold: float = 0.5) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = [
        ("n_users", str(params.n_users)), ("n_items", str(params.n_items)),
        ("dim", str(params.dim)), ("decay", _fmt(params.decay)), ("threshold", _fmt(threshold)),
    ] + [(name, _fmt(getattr(params, name))) for name in SCALARS]
    with open(path / "meta.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("key", "value"))
        w.writerows(meta)
    emb_cols = [f"e{k}" for k in range(params.dim)]
    with open(path / "users.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_idx", "lam_user", "user_bias"] + emb_cols)
        for u in range(params.n_users):
            w.writerow([u, _fmt(params.lam_user[u]), _fmt(params.user_bias[u])]
                       + [_fmt(x) for x in params.user_emb[u]])
    with open(path / "items.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_idx", "item_bias"] + emb_cols)
        for i in range(params.n_items):
            w.writerow([i, _fmt(params.item_bias[i])] + [_fmt(x) for x in params.item_emb[i]])


def load_checkpoint(path) -> tuple[ModelParams, float]:
    path = Path(path)
    with open(path / "meta.csv", newline="") as fh:
        meta = {row["key"]: row["value"] for row in csv.DictReader(fh)}
    n_users, n_items, dim = int(meta["n_users"]), int(meta["n_items"]), int(meta["dim"])
    users = np.loadtxt(path / "users.csv", delimiter=",", skiprows=1, ndmin=2)
    items = np.loadtxt(path / "items.csv", delimiter=",", skiprows=1, ndmin=2)
    if users.shape != (n_users, dim + 3) or items.shape != (n_items, dim + 2):
        raise ValueError(f"{path}: checkpoint tables do not match meta.csv")
    params = ModelParams(
        user_emb=users[:, 3:].copy(), item_emb=items[:, 2:].copy(),
        lam=float(meta["lam"]), lam_user=users[:, 1].copy(), cutoff=float(meta["cutoff"]),
        alpha=float(meta["alpha"]), beta=float(meta["beta"]), gamma=float(meta["gamma"]),
        user_bias=users[:, 2].copy(), item_bias=items[:, 1].copy(), decay=float(meta["decay"]),
    )
    return params, float(meta["threshold"])
