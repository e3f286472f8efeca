"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``. The lines are printed even
when output capture is on.

Criterion 5 needs the public listening dataset, already ingested and filtered
to the canonical CSV format. Point ``EX2VEC_PUBLIC_DATA`` at that file to run
it; without it the criterion is reported as WAIVED.
"""
import math
import os
import time

import numpy as np
import pytest

from ex2vec.analysis import listen_fraction_curve
from ex2vec.data import Dataset, RepetitionClass, holdout_split, kcore_filter, read_canonical
from ex2vec.evaluation import evaluate_models
from ex2vec.gradcheck import GradCheckReport, finite_diff_check, random_problem
from ex2vec.kernels import base_level, exposure_kernel
from ex2vec.metrics import balanced_accuracy, weighted_f1
from ex2vec.synth import mee_spec, synth_generate
from ex2vec.trainer import TrainConfig

# Training setup for the synthetic recovery run (see README).
RECOVERY_CONFIG = TrainConfig(dim=8, epochs=100, lr_grid=(1e-3,), batch_size=512, l2_weight=1e-4)


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail, status=None):
        status = status or ("PASS" if ok else "FAIL")
        with capsys.disabled():
            print(f"\nACCEPTANCE {number}: {status} - {detail}")
        return ok
    return emit


# 1 -----------------------------------------------------------------------------

def test_criterion_1_gradient_check(report):
    rng = np.random.default_rng(2024)
    total = GradCheckReport(tol=1e-4)
    start = time.perf_counter()
    for _ in range(100):
        params, batch = random_problem(rng, int(rng.choice([2, 8, 64])), max_hist=50)
        total.merge(finite_diff_check(params, batch, l2_weight=float(rng.uniform(0, 1e-3)), tol=1e-4, rng=rng))
    elapsed = time.perf_counter() - start
    worst = max(total.max_rel_error.values())
    ok = total.ok and worst < 1e-4 and elapsed < 60
    report(1, ok, f"max rel error {worst:.2e} (< 1e-4), {total.skipped} boundary coords skipped, {elapsed:.1f}s (< 60s)")
    assert ok


# 2 -----------------------------------------------------------------------------

def _kernel_oracle(history, t, c, d):
    return math.fsum((t - tj + c) ** -d for tj in history if t > tj)


def _base_level_oracle(history, t, d):
    terms = [(t - tj) ** -d for tj in history if t > tj]
    return math.log(math.fsum(terms)) if terms else -math.inf


def test_criterion_2_kernel_oracles(report):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(0, 51))
        hist = np.cumsum(rng.lognormal(2.0, 1.0, n))
        t = float(hist[-1] + rng.exponential(10.0)) if n else 1.0
        c, d = float(rng.uniform(0.1, 5)), float(rng.uniform(0.05, 1.5))
        worst = max(worst, abs(exposure_kernel(hist, t, c, d) - _kernel_oracle(hist, t, c, d)))
        ob = _base_level_oracle(hist, t, d)
        bl = base_level(hist, t, d)
        worst = max(worst, 0.0 if (math.isinf(ob) and bl == ob) else abs(bl - ob))
    kern = exposure_kernel([0, 1, 3], 10, 3, 0.5)
    bl = base_level([0, 1, 3], 10, 0.5)
    oracle_ok = worst <= 1e-12
    kern_ok = abs(kern - 0.882253) < 5e-7
    bl_ok = abs(bl - 0.02716) < 5e-7
    ok = oracle_ok and kern_ok and bl_ok
    report(2, ok, f"oracle max diff {worst:.1e} (<= 1e-12) {'ok' if oracle_ok else 'BAD'}; "
                  f"kernel {kern:.6f} vs 0.882253 {'ok' if kern_ok else 'BAD'}; "
                  f"base-level {bl:.6f} vs 0.02716 {'ok' if bl_ok else 'BAD'}")
    assert ok


# 3 -----------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_3_synthetic_recovery(report):
    start = time.perf_counter()
    ds, _ = synth_generate(mee_spec(n_users=200, n_items=100, seed=1))
    rep = evaluate_models(ds, seeds=range(5), config=RECOVERY_CONFIG)
    elapsed = time.perf_counter() - start
    ex2vec, _ = rep.mean_std("Ex2Vec")
    prev, _ = rep.mean_std("Prev")
    margin = 100 * (ex2vec - prev)
    ok = 50_000 <= len(ds) <= 200_000 and margin >= 2.0 and elapsed < 600
    report(3, ok, f"{len(ds)} exposures; Ex2Vec {100 * ex2vec:.2f}% vs Prev {100 * prev:.2f}% "
                  f"(+{margin:.2f} pp, need >= 2); {elapsed:.0f}s (< 600s)")
    assert ok


# 4 -----------------------------------------------------------------------------

def test_criterion_4_inverted_u(report):
    spec = mee_spec(n_users=200, n_items=100, seed=0)
    ds, _ = synth_generate(spec)
    pts = [p for p in listen_fraction_curve(ds) if p.repetition_class == RepetitionClass.VERY_HIGH]
    js = [p.exposure_index for p in pts]
    peak = max(pts, key=lambda p: p.value).exposure_index
    ok = min(js) < peak < max(js)
    report(4, ok, f"VHRep listen fraction peaks at exposure {peak} of {min(js)}..{max(js)} "
                  f"({pts[0].value:.3f} -> {max(p.value for p in pts):.3f} -> {pts[-1].value:.3f})")
    assert ok


# 5 -----------------------------------------------------------------------------

def test_criterion_5_public_dataset(report):
    path = os.environ.get("EX2VEC_PUBLIC_DATA")
    if not path or not os.path.exists(path):
        report(5, True, "public dataset not available (set EX2VEC_PUBLIC_DATA to run)", status="WAIVED")
        pytest.skip("public dataset not available")
    start = time.perf_counter()
    ds = read_canonical(path)
    seeds = range(5)
    rep = evaluate_models(ds, seeds=seeds, config=TrainConfig(dim=64, epochs=100))
    elapsed = time.perf_counter() - start
    ex2vec, prev, bl = (100 * rep.mean_std(m)[0] for m in ("Ex2Vec", "Prev", "BL"))
    order = all(e[0] > p[0] > b[0] for e, p, b in zip(rep.scores["Ex2Vec"], rep.scores["Prev"], rep.scores["BL"]))
    ok = (abs(ex2vec - 64.27) <= 1.5 and abs(prev - 59.88) <= 1.5 and abs(bl - 57.81) <= 1.5
          and order and elapsed <= 3600)
    report(5, ok, f"Ex2Vec {ex2vec:.2f} (64.27), Prev {prev:.2f} (59.88), BL {bl:.2f} (57.81), "
                  f"ordering on every seed: {order}, {elapsed:.0f}s")
    assert ok


# 6 -----------------------------------------------------------------------------

def _brute_force_kcore(edges, k_item, k_user):
    edges = set(edges)
    while True:
        users, items = {}, {}
        for u, i in edges:
            users[u] = users.get(u, 0) + 1
            items[i] = items.get(i, 0) + 1
        bad_u = next((u for u, n in users.items() if n < k_item), None)
        if bad_u is not None:
            edges = {e for e in edges if e[0] != bad_u}
            continue
        bad_i = next((i for i, n in items.items() if n < k_user), None)
        if bad_i is not None:
            edges = {e for e in edges if e[1] != bad_i}
            continue
        return edges


def _split_invariants_hold(ds, seed):
    split = holdout_split(ds, seed)
    pairs = {tuple(p) for p in ds.pairs().tolist()}
    train = {tuple(p) for p in split.train.pairs().tolist()}
    val = {tuple(p) for p in split.validation.tolist()}
    test = {tuple(p) for p in split.test.tolist()}
    if train & val or train & test or val & test or train | val | test != pairs:
        return False
    for u in range(ds.n_users):
        if sum(1 for p in val if p[0] == u) != 2 or sum(1 for p in test if p[0] == u) != 2:
            return False
    kept = len(split.train) + len(ds.select_pairs(split.validation)) + len(ds.select_pairs(split.test))
    return kept == len(ds)


def test_criterion_6_preprocessing(report):
    rng = np.random.default_rng(6)
    kcore_bad = 0
    for _ in range(1000):
        nu, ni = int(rng.integers(1, 51)), int(rng.integers(1, 51))
        n_edges = int(rng.integers(1, nu * ni + 1))
        flat = rng.choice(nu * ni, size=min(n_edges, 400), replace=False)
        edges = [(int(f // ni), int(f % ni)) for f in flat]
        k_item, k_user = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        ds = Dataset.from_arrays([e[0] for e in edges], [e[1] for e in edges], [0.0] * len(edges),
                                 [1] * len(edges), nu, ni,
                                 user_ids=tuple(f"u{k}" for k in range(nu)),
                                 item_ids=tuple(f"i{k}" for k in range(ni)))
        out = kcore_filter(ds, k_item, k_user)
        got = {(out.user_ids[u], out.item_ids[i]) for u, i in out.pairs().tolist()}
        expected = _brute_force_kcore({(f"u{u}", f"i{i}") for u, i in edges}, k_item, k_user)
        if got != expected or not kcore_filter(out, k_item, k_user) == out:
            kcore_bad += 1
    split_bad = 0
    for k in range(100):
        nu, ni = int(rng.integers(1, 10)), int(rng.integers(5, 15))
        rows = []
        for u in range(nu):
            items = rng.choice(ni, size=int(rng.integers(5, ni + 1)), replace=False)
            for i in items:
                for t in np.sort(rng.choice(500, size=int(rng.integers(1, 5)), replace=False)):
                    rows.append((u, int(i), float(t), int(rng.integers(0, 2))))
        u, i, t, y = zip(*rows)
        ds = Dataset.from_arrays(u, i, t, y, nu, ni)
        split_bad += not _split_invariants_hold(ds, k)
    ok = kcore_bad == 0 and split_bad == 0
    report(6, ok, f"k-core mismatches {kcore_bad}/1000 graphs; split invariant failures {split_bad}/100 datasets")
    assert ok


# 7 -----------------------------------------------------------------------------

def _hand_metrics(true, pred):
    tp = sum(1 for a, b in zip(true, pred) if a == 1 and b == 1)
    fp = sum(1 for a, b in zip(true, pred) if a == 0 and b == 1)
    tn = sum(1 for a, b in zip(true, pred) if a == 0 and b == 0)
    fn = sum(1 for a, b in zip(true, pred) if a == 1 and b == 0)
    ba = (tp / (tp + fn) + tn / (tn + fp)) / 2
    f1_pos = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
    f1_neg = 2 * tn / (2 * tn + fn + fp) if tn + fn + fp else 0.0
    return ba, ((tp + fn) * f1_pos + (tn + fp) * f1_neg) / len(true)


def test_criterion_7_metric_oracles(report):
    rng = np.random.default_rng(77)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 500))
        true = rng.integers(0, 2, n)
        true[:2] = (0, 1)
        pred = rng.integers(0, 2, n)
        ba, wf1 = _hand_metrics(true.tolist(), pred.tolist())
        worst = max(worst, abs(balanced_accuracy(true, pred) - ba), abs(weighted_f1(true, pred) - wf1))
    ex_ba = balanced_accuracy([1, 1, 0, 0], [1, 0, 0, 0])
    ex_f1 = weighted_f1([1, 1, 0, 0], [1, 0, 0, 0])
    ok = worst <= 1e-12 and ex_ba == 0.75 and round(ex_f1, 4) == 0.7333
    report(7, ok, f"max diff {worst:.1e} over 50 sets (<= 1e-12); worked example BA {ex_ba:.4f}, wF1 {ex_f1:.4f}")
    assert ok
