import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ex2vec.data import ExposureTable, holdout_split
from ex2vec.metrics import balanced_accuracy
from ex2vec.model import TRAINABLE
from ex2vec.synth import mee_spec, synth_generate
from ex2vec.trainer import (
    ConfigError, OptimizerState, TrainConfig, adam_step, calibrate_threshold, init_params,
    run_epoch, train, write_log,
)


@pytest.fixture(scope="module")
def tiny():
    ds, _ = synth_generate(mee_spec(n_users=10, n_items=10, items_per_user=7, dim=4, seed=3))
    split = holdout_split(ds, 0)
    return ds, split


def _zero_grads(params):
    return {n: np.zeros_like(np.asarray(getattr(params, n), dtype=float)) for n in TRAINABLE}


# --- config ------------------------------------------------------------------

def test_config_defaults():
    cfg = TrainConfig()
    assert cfg.dim == 64 and cfg.epochs == 100
    assert cfg.lr_grid == (5e-5, 2e-4, 7.5e-4, 1e-3)


def test_config_parse_round_trip():
    cfg = TrainConfig(dim=8, epochs=3, lr_grid=(1e-3, 1e-2), l2_weight=0.0, seed=9)
    assert TrainConfig.parse(cfg.dump()) == cfg


def test_config_parse_comments_and_overrides():
    cfg = TrainConfig.parse("# comment\ndim = 16\nlr_grid=0.001, 0.01\n", seed=4)
    assert cfg.dim == 16 and cfg.lr_grid == (0.001, 0.01) and cfg.seed == 4


@pytest.mark.parametrize("text", ["dims=3", "dim", "dim=abc", "epochs=0", "lr_grid=-1"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        TrainConfig.parse(text)


# --- init & adam -------------------------------------------------------------

def test_init_params():
    cfg = TrainConfig(dim=5)
    p = init_params(cfg, 4, 6, seed=1)
    assert (p.alpha, p.beta, p.gamma, p.cutoff, p.decay) == (1.0, -0.0065, 0.5, 3.0, 0.5)
    assert p.lam == 0.0 and not p.lam_user.any() and not p.user_bias.any() and not p.item_bias.any()
    assert p.user_emb.shape == (4, 5) and p.item_emb.shape == (6, 5)
    assert init_params(cfg, 4, 6, seed=1).equals(p)
    assert not init_params(cfg, 4, 6, seed=2).equals(p)


def test_adam_first_step():
    p = init_params(TrainConfig(dim=2), 1, 1)
    g = _zero_grads(p)
    g["alpha"] = 1.0
    state = OptimizerState()
    adam_step(p, g, state, 1e-3)
    assert p.alpha - 1.0 == pytest.approx(-1e-3, rel=1e-7)


def test_adam_zero_gradient_keeps_params():
    p = init_params(TrainConfig(dim=2), 2, 2)
    before = p.copy()
    state = OptimizerState()
    adam_step(p, _zero_grads(p), state, 1e-2)
    assert p.equals(before) and state.step == 1


def test_adam_projects_cutoff():
    p = init_params(TrainConfig(dim=2), 1, 1)
    p.cutoff = 1e-3
    g = _zero_grads(p)
    g["cutoff"] = 5.0
    adam_step(p, g, OptimizerState(), 0.5)
    assert p.cutoff == 1e-3


def test_adam_matches_reference_sequence():
    p = init_params(TrainConfig(dim=1), 1, 1)
    state = OptimizerState()
    m = v = 0.0
    x = p.gamma
    for k, grad in enumerate([0.3, -1.2, 0.7, 2.0], start=1):
        g = _zero_grads(p)
        g["gamma"] = grad
        adam_step(p, g, state, 0.01)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad ** 2
        x -= 0.01 * (m / (1 - 0.9 ** k)) / (math.sqrt(v / (1 - 0.999 ** k)) + 1e-8)
        assert p.gamma == pytest.approx(x, abs=1e-15)


# --- threshold calibration ---------------------------------------------------

def test_calibrate_example():
    assert calibrate_threshold([0.2, 0.6, 0.8], [0, 1, 1]) == pytest.approx(0.4)


def test_calibrate_inverted_scores():
    thr = calibrate_threshold([0.9, 0.8, 0.1, 0.2], [0, 0, 1, 1])
    assert balanced_accuracy([0, 0, 1, 1], np.array([0.9, 0.8, 0.1, 0.2]) > thr) == 0.5


def test_calibrate_all_equal_prefers_smaller():
    assert calibrate_threshold([0.5] * 4, [0, 1, 0, 1]) == 0.0


def test_calibrate_single_class():
    with pytest.raises(ValueError):
        calibrate_threshold([0.1, 0.2], [1, 1])


def test_calibrate_with_sentinels():
    scores = np.array([-np.inf, -np.inf, -0.5, 0.3, 1.7])
    labels = np.array([0, 0, 1, 1, 1])
    thr = calibrate_threshold(scores, labels)
    assert balanced_accuracy(labels, scores > thr) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20).map(lambda k: k / 20), st.integers(0, 1)), min_size=2, max_size=40))
def test_calibrate_beats_dense_grid(pairs):
    scores = np.array([p[0] for p in pairs])
    labels = np.array([p[1] for p in pairs])
    if labels.min() == labels.max():
        return
    best = balanced_accuracy(labels, scores > calibrate_threshold(scores, labels))
    grid = np.linspace(0, 1, 10001)
    brute = max(balanced_accuracy(labels, scores > g) for g in grid)
    assert best >= brute - 1e-15


# --- training ----------------------------------------------------------------

def test_one_epoch_step_count(tiny):
    ds, split = tiny
    cfg = TrainConfig(dim=4, epochs=1, lr_grid=(1e-3,), batch_size=37)
    table = ExposureTable(split.train)
    state = OptimizerState()
    p = init_params(cfg, ds.n_users, ds.n_items)
    _, steps = run_epoch(p, state, table, 1e-3, cfg, np.random.default_rng(0))
    assert steps == state.step == math.ceil(len(table) / 37)


def test_train_is_deterministic(tiny):
    ds, split = tiny
    cfg = TrainConfig(dim=4, epochs=3, lr_grid=(1e-3, 1e-2), batch_size=64)
    a = train(split.train, ds.select_pairs(split.validation), cfg)
    b = train(split.train, ds.select_pairs(split.validation), cfg)
    assert a.log == b.log and a.params.equals(b.params) and a.threshold == b.threshold
    assert len(a.log) == 6 and {r["lr"] for r in a.log} == {1e-3, 1e-2}


def test_divergent_lr_is_skipped(tiny):
    ds, split = tiny
    cfg = TrainConfig(dim=4, epochs=2, lr_grid=(1e200, 1e-3), batch_size=64)
    res = train(split.train, ds.select_pairs(split.validation), cfg)
    assert res.lr == 1e-3
    assert res.events and "diverged" in res.events[0]


def test_train_rejects_empty_validation(tiny):
    ds, split = tiny
    with pytest.raises(ValueError):
        train(split.train, ds.select_pairs(np.empty((0, 2))), TrainConfig(dim=2, epochs=1))


def test_loss_decreases_on_tiny_data():
    improved = 0
    for seed in range(20):
        ds, _ = synth_generate(mee_spec(n_users=10, n_items=10, items_per_user=7, dim=4, seed=100 + seed))
        split = holdout_split(ds, seed)
        cfg = TrainConfig(dim=8, epochs=10, lr_grid=(1e-3,), batch_size=64, seed=seed)
        res = train(split.train, ds.select_pairs(split.validation), cfg)
        improved += res.log[-1]["train_loss"] < res.log[0]["train_loss"]
    assert improved >= 19


def test_write_log(tmp_path, tiny):
    ds, split = tiny
    res = train(split.train, ds.select_pairs(split.validation), TrainConfig(dim=2, epochs=2, lr_grid=(1e-3,)))
    write_log(res.log, tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,lr,train_loss,val_balanced_accuracy,threshold"
    assert len(lines) == 3
