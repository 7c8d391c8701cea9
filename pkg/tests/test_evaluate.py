import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import f1_score, precision_score, recall_score, roc_auc_score

from polywin import evaluate as ev
from polywin.errors import DataError, InputError, MetricError
from polywin.verify import brute_auroc, brute_prf


def test_probe_loss_at_zero():
    v, g = ev.probe_loss(np.zeros((3, 2)), np.array([[0, 1], [1, 1], [0, 0]]))
    assert v == pytest.approx(math.log(2), abs=1e-12)
    assert g.shape == (3, 2)


def test_probe_loss_saturates():
    y = np.array([[1, 0], [0, 1]])
    v, _ = ev.probe_loss(np.where(y == 1, 50.0, -50.0), y)
    assert v < 1e-20


def test_probe_loss_gradient():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 3))
    y = rng.integers(0, 2, size=(5, 3))
    _, g = ev.probe_loss(x, y)
    h, num = 1e-5, np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        num[i] = (ev.probe_loss(xp, y)[0] - ev.probe_loss(xm, y)[0]) / (2 * h)
    assert np.abs(g - num).max() / np.abs(num).max() <= 1e-6


def test_probe_loss_rejects_soft_targets():
    with pytest.raises(DataError):
        ev.probe_loss(np.zeros((1, 1)), np.array([[0.5]]))


def test_auroc_basics():
    y = np.array([[0, 1], [1, 0], [1, 1], [0, 0]])
    assert ev.auroc_macro(y.astype(float), y) == 1.0
    assert ev.auroc_macro(np.zeros((4, 2)), y) == 0.5


def test_auroc_six_point_case():
    s = np.array([0.1, 0.4, 0.35, 0.8, 0.4, 0.7])
    y = np.array([0, 0, 1, 1, 1, 0])
    assert ev.auroc_macro(s[:, None], y[:, None]) == brute_auroc(s, y)
    assert ev.auroc_macro(s[:, None], y[:, None]) == pytest.approx(roc_auc_score(y, s))


def test_auroc_all_degenerate():
    with pytest.raises(MetricError):
        ev.auroc_macro(np.ones((3, 2)), np.ones((3, 2), int))


def test_auroc_skips_degenerate_class():
    s = np.array([[0.1, 0.3], [0.9, 0.2]])
    y = np.array([[0, 1], [1, 1]])
    assert ev.auroc_per_class(s, y) == [1.0, None]
    rep = ev.metric_report(s, y, class_names=["a", "b"])
    assert rep.auroc == 1.0 and rep.auroc_excluded == ["b"]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(3, 20))
def test_auroc_rank_invariance(seed, n):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, size=(n, 2))
    y[0], y[1] = 0, 1
    s = rng.normal(size=(n, 2))
    a = ev.auroc_macro(s, y)
    assert a == pytest.approx(ev.auroc_macro(np.exp(3 * s) + 1, y), abs=1e-12)
    assert a == pytest.approx(ev.auroc_macro(s[:, ::-1], y[:, ::-1]), abs=1e-12)


def test_prf_perfect_and_empty():
    y = np.array([[1, 0], [0, 1], [1, 1]])
    assert ev.prf_at_threshold(y.astype(float), y) == (1.0, 1.0, 1.0)
    assert ev.prf_at_threshold(np.zeros((3, 2)), y) == (0.0, 0.0, 0.0)


def test_prf_hand_case():
    # 8 samples, 2 classes; counts worked out by hand:
    # class 0: tp=3 fp=1 fn=1 -> p=.75 r=.75 f1=.75
    # class 1: tp=1 fp=2 fn=1 -> p=1/3 r=.5 f1=.4
    y = np.array([[1, 0], [1, 1], [1, 0], [1, 0], [0, 1], [0, 0], [0, 0], [0, 0]])
    s = np.array([[.9, .1], [.8, .7], [.6, .2], [.3, .1], [.2, .4], [.7, .6], [.1, .9], [.0, .0]])
    p, r, f = ev.prf_at_threshold(s, y, 0.5)
    assert p == pytest.approx((0.75 + 1 / 3) / 2, abs=0)
    assert r == pytest.approx((0.75 + 0.5) / 2, abs=0)
    assert f == pytest.approx((0.75 + 0.4) / 2, abs=1e-15)


def test_threshold_is_inclusive():
    assert ev.prf_at_threshold(np.array([[0.5]]), np.array([[1]]), 0.5) == (1.0, 1.0, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_prf_matches_brute_force_and_sklearn(seed):
    rng = np.random.default_rng(seed)
    n, k = int(rng.integers(1, 12)), int(rng.integers(1, 4))
    s = rng.random((n, k))
    y = rng.integers(0, 2, size=(n, k))
    got = ev.prf_at_threshold(s, y, 0.5)
    assert got == pytest.approx(brute_prf(s, y, 0.5), abs=0)
    if k == 1:
        return  # sklearn reads an (n, 1) target as binary and averages over both values
    pred = (s >= 0.5).astype(int)
    ref = (
        precision_score(y, pred, average="macro", zero_division=0),
        recall_score(y, pred, average="macro", zero_division=0),
        f1_score(y, pred, average="macro", zero_division=0),
    )
    assert got == pytest.approx(ref, abs=1e-12)


def test_aggregate_seeds():
    assert ev.aggregate_seeds([0.3, 0.3, 0.3]) == (0.3, 0.3, 0.3)
    mean, lo, hi = ev.aggregate_seeds([0.0, 1.0])
    assert mean == 0.5
    assert hi - mean == pytest.approx(12.7062047 * 0.70710678 / math.sqrt(2), rel=1e-6)
    assert hi - mean == pytest.approx(6.353, abs=1e-3)
    assert mean - lo == pytest.approx(hi - mean)
    with pytest.raises(InputError):
        ev.aggregate_seeds([1.0])


def test_metric_report_zero_division_flag():
    y = np.array([[1, 0], [0, 0]])
    rep = ev.metric_report(np.array([[0.9, 0.1], [0.1, 0.2]]), y, class_names=["a", "b"])
    assert rep.zero_division == ["b"]
    d = rep.to_dict()
    assert {"f1", "auroc", "recall", "precision"} <= set(d)
    assert '"per_class"' in rep.to_json()


def _separable(rng, n, d=6, k=3):
    w = rng.normal(size=(d, k))
    x = rng.normal(size=(n, d))
    return x, (x @ w > 0).astype(int)


def test_probe_learns_separable_features():
    rng = np.random.default_rng(0)
    xtr, ytr = _separable(rng, 400)
    xva, yva = _separable(np.random.default_rng(0), 400)
    res = ev.train_probe(xtr, ytr, xva, yva, ev.ProbeConfig(epochs=90, batch_size=64))
    assert res.best_val_f1 >= 0.97
    assert len(res.val_f1_trace) == 90


def test_probe_on_label_free_features_is_chance():
    aucs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(600, 8))
        y = rng.integers(0, 2, size=(600, 3))
        res = ev.train_probe(x[:400], y[:400], x[400:500], y[400:500], ev.ProbeConfig(epochs=20, seed=seed))
        aucs.append(ev.auroc_macro(res.probe.predict_proba(x[500:]), y[500:]))
    assert abs(np.mean(aucs) - 0.5) <= 0.05


def test_probe_is_deterministic():
    rng = np.random.default_rng(3)
    x, y = _separable(rng, 200)
    a = ev.train_probe(x, y, x, y, ev.ProbeConfig(epochs=15, seed=4))
    b = ev.train_probe(x, y, x, y, ev.ProbeConfig(epochs=15, seed=4))
    assert a.best_epoch == b.best_epoch
    np.testing.assert_array_equal(a.probe.weight, b.probe.weight)


def test_probe_ties_keep_earlier_epoch():
    # constant labels and threshold above any reachable score: F1 is 0 every epoch
    x = np.random.default_rng(0).normal(size=(50, 2))
    y = np.zeros((50, 1), int)
    res = ev.train_probe(x, y, x, y, ev.ProbeConfig(epochs=5))
    assert res.best_epoch == 1


def test_probe_requires_data():
    with pytest.raises(InputError):
        ev.train_probe(np.zeros((0, 2)), np.zeros((0, 1)), np.zeros((3, 2)), np.zeros((3, 1)))
