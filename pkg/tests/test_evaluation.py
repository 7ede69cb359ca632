import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auvsvr.auv_dynamics import Dataset
from auvsvr.evaluation import (TRACE_COLUMNS, SplitSpec, UndefinedScoreError, calibrate_kernel,
                               compare_strategies, offline_baseline, online_run, r2_score,
                               read_trace, segments, stratified_split, tune)
from auvsvr.kernel_density import KernelParams
from auvsvr.svr_core import Hyperparams, SupportSet, predict_many


def _labelled(counts, seed=0):
    r = np.random.default_rng(seed)
    labels = np.concatenate([np.full(n, k) for k, n in counts.items()])
    data = np.column_stack([np.arange(len(labels), dtype=float), r.normal(size=(len(labels), 9)), labels])
    return Dataset(data)


# r2

def test_r2_fixtures():
    y = np.array([1.0, 2.0, 3.0])
    assert r2_score(y, y) == 1.0
    assert r2_score(np.full(3, 2.0), y) == 0.0
    assert r2_score([1.0, 2.0, 4.0], y) == 0.5


def test_r2_errors():
    with pytest.raises(UndefinedScoreError):
        r2_score([1.0, 2.0], [3.0, 3.0])
    with pytest.raises(ValueError):
        r2_score([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        r2_score([], [])


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=30).filter(
    lambda v: np.ptp(v) > 1e-3))
def test_r2_identities(values):
    y = np.array(values)
    assert r2_score(y, y) == pytest.approx(1.0, abs=1e-12)
    assert r2_score(np.full_like(y, y.mean()), y) == pytest.approx(0.0, abs=1e-12)


# splits

def test_split_tiny():
    train, val = stratified_split(_labelled({1: 10}))
    assert len(train) == 8 and len(val[1]) == 2


def test_split_default_sizes():
    train, val = stratified_split(_labelled({1: 10_000, 2: 10_000, 3: 10_000}))
    assert len(train) == 24_000
    assert train.counts() == {1: 8000, 2: 8000, 3: 8000}
    assert {k: len(v) for k, v in val.items()} == {1: 2000, 2: 2000, 3: 2000}


@settings(max_examples=25)
@given(st.dictionaries(st.integers(1, 4), st.integers(5, 60), min_size=1), st.integers(0, 1000))
def test_split_disjoint_exhaustive_ordered(counts, seed):
    ds = _labelled(counts)
    train, val = stratified_split(ds, SplitSpec(0.8, seed))
    t_train = train.t
    assert np.all(np.diff(t_train) > 0)
    for k, n in counts.items():
        t_val = val[k].t
        t_tr = t_train[train.config == k]
        assert abs(len(t_tr) - 0.8 * n) <= 1
        assert not set(t_val) & set(t_tr)
        assert sorted(set(t_val) | set(t_tr)) == sorted(ds.t[ds.config == k])


def test_split_seeded():
    ds = _labelled({1: 40, 2: 40})
    a, b = stratified_split(ds, SplitSpec(0.8, 3)), stratified_split(ds, SplitSpec(0.8, 3))
    assert np.array_equal(a[0].data, b[0].data)
    c = stratified_split(ds, SplitSpec(0.8, 4))
    assert not np.array_equal(a[0].data, c[0].data)


def test_split_too_small():
    with pytest.raises(ValueError):
        stratified_split(_labelled({1: 20, 2: 4}))


def test_segments():
    assert segments(np.array([1, 1, 2, 2, 2, 3])) == [(1, 0, 2), (2, 2, 5), (3, 5, 6)]


# offline baseline

def _linear_dataset(n=120, label=1, seed=0):
    r = np.random.default_rng(seed)
    X = r.uniform(-1, 1, size=(n, 6))
    Y = X @ np.array([[1.0, 0.5, -0.2], [0.3, -1, 0.1], [0.0, 0.2, 0.8],
                      [0.1, 0.0, 0.0], [0.0, 0.1, 0.0], [0.0, 0.0, 0.1]])
    return Dataset(np.column_stack([np.arange(n, dtype=float), X, Y, np.full(n, label)]))


def test_offline_baseline_noiseless_linear():
    ds = _linear_dataset()
    train, val = stratified_split(ds)
    kp = calibrate_kernel(train, 1.0)
    hps = [Hyperparams(epsilon=0.001, cost=100.0, gamma=0.1) for _ in range(3)]
    scores, converged, n_sv = offline_baseline(train, val, hps, kp)
    assert scores.shape == (1, 3)
    assert np.all(scores >= 0.99) and converged.all()


def test_bias_only_model_scores_nonpositive():
    ds = _linear_dataset()
    kp = KernelParams(np.ones(6), 1.0)
    for bias in (0.0, 0.3, -2.0, float(ds.Y[:, 0].mean())):
        model = SupportSet.empty(kp, bias=bias)
        assert r2_score(predict_many(model, ds.X), ds.Y[:, 0]) <= 1e-15


# online protocol

@pytest.fixture(scope="module")
def small_run(small_dataset):
    train, val = stratified_split(small_dataset, SplitSpec(0.8, 0))
    kp = calibrate_kernel(train, 1.0)
    hps = [Hyperparams(epsilon=0.005, cost=10.0, gamma=1.0, buffer_size=60, k=k) for k in (10, 10, 1)]
    return train, val, kp, hps


def test_trace_length_and_partition(small_run):
    train, val, kp, hps = small_run
    for E in (1, 7, len(train)):
        trace = online_run(train, val, hps, kp, "kde", eval_every=E)
        assert len(trace) == math.ceil(len(train) / E)
    steps = trace.steps
    assert len(steps) == 1
    trace = online_run(train, val, hps, kp, "kde", eval_every=3)
    assert np.all(np.diff(trace.steps) > 0)
    expected = train.config[trace.steps]
    assert np.array_equal(trace.configs, expected)
    assert trace.switch_steps == [int(np.argmax(train.config == 2)), int(np.argmax(train.config == 3))]
    assert set(trace.segment_scores) == {1, 2, 3}


def test_ten_sample_stream(small_run):
    train, val, kp, hps = small_run
    trace = online_run(train.subset(np.arange(10)), val, hps, kp, eval_every=1)
    assert len(trace) == 10
    assert trace.r2_mean[0] <= 0.0


def test_trace_csv(tmp_path, small_run):
    train, val, kp, hps = small_run
    trace = online_run(train.subset(np.arange(50)), val, hps, kp, eval_every=5)
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
    arr = read_trace(path)
    assert arr.shape == (10, len(TRACE_COLUMNS))
    assert np.allclose(arr[:, 6], arr[:, 3:6].mean(axis=1))


def test_eval_every_validated(small_run):
    train, val, kp, hps = small_run
    with pytest.raises(ValueError):
        online_run(train, val, hps, kp, eval_every=0)


def test_compare_without_overflow_is_identical(small_run):
    train, val, kp, hps = small_run
    big = [Hyperparams(**{**h.__dict__, "buffer_size": len(train) + 1}) for h in hps]
    cmp = compare_strategies(train, val, big, kp, eval_every=10)
    assert cmp.summary["forgetting_inactive"]
    assert np.array_equal(cmp.kde.r2, cmp.fifo.r2)


def test_compare_single_config(small_run):
    train, val, kp, hps = small_run
    one = train.subset(train.config == 1)
    cmp = compare_strategies(one, {1: val[1]}, hps, kp, eval_every=5)
    s = cmp.summary["segments"]["1"]
    assert s["kde_mean"] > 0.5 and s["fifo_mean"] > 0.5
    assert abs(s["kde_mean"] - s["fifo_mean"]) <= 0.1


def test_strategies_agree_until_first_overflow(small_run):
    train, val, kp, hps = small_run
    cmp = compare_strategies(train, val, hps, kp, eval_every=1)
    bufs = np.array([e.buffers for e in cmp.kde.entries])
    first_full = int(np.argmax((bufs >= hps[0].buffer_size).any(axis=1)))
    assert np.array_equal(cmp.kde.r2[:first_full], cmp.fifo.r2[:first_full])


def test_tune_returns_best_grid_point(small_run):
    train, val, kp, hps = small_run
    grid = {"epsilon": (0.001, 0.1), "cost": (10.0,), "gamma": (1.0, 100.0)}
    best, table = tune(train.subset(train.config == 1), val[1], kp, grid, base=hps)
    assert len(best) == 3 and all(len(rows) == 4 for rows in table)
    for d in range(3):
        scores = [r for _, r in table[d]]
        assert dict((id(h), r) for h, r in table[d])[id(best[d])] == max(scores)
        assert best[d].k == hps[d].k
