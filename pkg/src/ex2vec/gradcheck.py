"""Central finite-difference verification of :func:`ex2vec.model.gradients`."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Batch, make_batch
from .model import SCALARS, SCORE_EPS, ModelParams, batch_loss, forward, gradients

# Gradients smaller than this are compared on an absolute scale.
GRAD_FLOOR = 1e-6
BOUNDARY_MARGIN = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    skipped: int = 0
    tol: float = 1e-4

    @property
    def failures(self) -> list:
        return [k for k, v in self.max_rel_error.items() if v > self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures

    def merge(self, other: "GradCheckReport") -> None:
        for k, v in other.max_rel_error.items():
            self.max_rel_error[k] = max(self.max_rel_error.get(k, 0.0), v)
            self.checked[k] = self.checked.get(k, 0) + other.checked.get(k, 0)
        self.skipped += other.skipped


def _regime(params, batch):
    tr = forward(params, batch)
    return (
        tr.pre_clamp > 0,
        tr.lam_raw >= 0,
        (tr.score >= SCORE_EPS) & (tr.score <= 1 - SCORE_EPS),
    ), tr


def _near_boundary(tr) -> np.ndarray:
    return (np.abs(tr.pre_clamp) < BOUNDARY_MARGIN) | (np.abs(tr.lam_raw) < BOUNDARY_MARGIN)


def _coords(params, name, rng, batch, n_sample):
    value = getattr(params, name)
    if name in SCALARS:
        return [()]
    if name in ("user_emb", "lam_user", "user_bias"):
        rows = np.unique(batch.user)
    else:
        rows = np.unique(batch.item)
    if np.ndim(value) == 1:
        cands = [(int(r),) for r in rows]
    else:
        cands = [(int(r), k) for r in rows for k in range(value.shape[1])]
    if len(cands) > n_sample:
        pick = rng.choice(len(cands), size=n_sample, replace=False)
        cands = [cands[p] for p in sorted(pick)]
    return cands


def _perturbed(params, name, coord, delta):
    p = params.copy()
    if name in SCALARS:
        setattr(p, name, getattr(p, name) + delta)
    else:
        getattr(p, name)[coord] += delta
    return p


def finite_diff_check(params: ModelParams, batch: Batch, l2_weight: float = 0.0,
                      h: float = 1e-5, tol: float = 1e-4, n_sample: int = 10,
                      rng=None, grads=None) -> GradCheckReport:
    """Compare analytic and central-difference gradients.

    Every scalar parameter is checked; array parameters contribute up to
    ``n_sample`` random coordinates among the rows the batch touches.
    Coordinates whose ±h perturbation moves a clamp or the score clip, or that
    sit within 1e-6 of a clamp kink, are skipped.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(rng)
    if grads is None:
        grads = gradients(params, batch, l2_weight)
    regime, tr = _regime(params, batch)
    report = GradCheckReport(tol=tol)
    for name in grads:
        errs = []
        for coord in _coords(params, name, rng, batch, n_sample):
            plus = _perturbed(params, name, coord, h)
            minus = _perturbed(params, name, coord, -h)
            rp, trp = _regime(plus, batch)
            rm, trm = _regime(minus, batch)
            moved = any(not (np.array_equal(a, b) and np.array_equal(a, c)) for a, b, c in zip(regime, rp, rm))
            if moved or _near_boundary(trp).any() or _near_boundary(trm).any():
                report.skipped += 1
                continue
            numeric = (batch_loss(plus, batch, l2_weight, trp) - batch_loss(minus, batch, l2_weight, trm)) / (2 * h)
            g = grads[name]
            analytic = float(g if name in SCALARS else g[coord])
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), GRAD_FLOOR)
            errs.append(err)
        if errs:
            report.max_rel_error[name] = max(errs)
            report.checked[name] = len(errs)
    return report


def random_problem(rng, dim: int, n_users: int = 6, n_items: int = 8, n_samples: int = 24,
                   max_hist: int = 50) -> tuple[ModelParams, Batch]:
    """A random parameter set plus batch for gradient checking.

    Scales are chosen so the effective distance usually stays positive and the
    score is not saturated.
    """
    scale = 1.0 / np.sqrt(dim)
    params = ModelParams(
        user_emb=rng.normal(0, scale, (n_users, dim)),
        item_emb=rng.normal(0, scale, (n_items, dim)),
        lam=float(rng.uniform(0.05, 0.5)),
        lam_user=rng.normal(0, 0.05, n_users),
        cutoff=float(rng.uniform(0.5, 5.0)),
        alpha=float(rng.normal(1.0, 0.5)),
        beta=float(rng.normal(-0.3, 0.2)),
        gamma=float(rng.normal(0.0, 0.5)),
        user_bias=rng.normal(0, 0.3, n_users),
        item_bias=rng.normal(0, 0.3, n_items),
    )
    samples = []
    for _ in range(n_samples):
        n = int(rng.integers(0, max_hist + 1))
        gaps = rng.lognormal(np.log(8.0), 1.0, n + 1)
        times = np.cumsum(gaps)
        samples.append((int(rng.integers(n_users)), int(rng.integers(n_items)),
                        times[:-1], float(times[-1]), int(rng.integers(2))))
    return params, make_batch(samples)
