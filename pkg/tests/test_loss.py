import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polywin import loss as L
from polywin.errors import ConfigError, GuardError, InputError
from polywin.verify import reference_infonce

KINDS = L.LOSS_KINDS


def unit(rng, rows, d):
    return L.random_embeddings(rng, rows, d)


def test_mask_small():
    m = L.build_mask(2, 2)
    assert m.sum() == 4
    assert {tuple(x) for x in np.argwhere(m)} == {(0, 1), (1, 0), (2, 3), (3, 2)}


def test_mask_counts():
    m = L.build_mask(3, 4)
    assert (m.sum(axis=1) == 3).all() and m.sum() == 36
    assert (m == m.T).all() and not m.diagonal().any()


@pytest.mark.parametrize("N,M", [(1, 2), (2, 1), (0, 3)])
def test_mask_rejects_degenerate_sizes(N, M):
    with pytest.raises(ConfigError):
        L.build_mask(N, M)


def test_similarity_examples(rng):
    z = unit(rng, 1, 5)
    assert L.similarity(np.vstack([z, z]), 1.0).S[0, 1] == pytest.approx(1.0)
    S = L.similarity(np.eye(3), 0.5).S
    np.testing.assert_allclose(S, 2.0 * np.eye(3))


def test_similarity_matches_pairwise_dots(rng):
    Z = unit(rng, 7, 6)
    S = L.similarity(Z, 0.3).S
    ref = np.array([[sum(a * b for a, b in zip(Z[i], Z[j])) / 0.3 for j in range(7)] for i in range(7)])
    assert np.abs(S - ref).max() <= 1e-6


def test_similarity_errors(rng):
    with pytest.raises(InputError):
        L.similarity(2 * unit(rng, 3, 4), 0.1)
    with pytest.raises(ConfigError):
        L.similarity(unit(rng, 3, 4), 0.0)


@pytest.mark.parametrize("kind", KINDS)
def test_identical_embeddings_give_log_nm_minus_one(kind):
    Z = np.tile([[0.6, 0.8]], (4, 1))
    assert L.poly_window_loss(Z, 2, 2, kind, 0.1).value == pytest.approx(math.log(3), abs=1e-12)
    assert L.oracle_loss(Z, 0.1, 2, 2, kind) == pytest.approx(math.log(3), abs=1e-12)


@pytest.mark.parametrize("kind,N,M", [("geometric", 3, 3), ("arithmetic", 4, 4)])
def test_random_instance_matches_oracle(rng, kind, N, M):
    Z = unit(rng, N * M, 8)
    assert abs(L.poly_window_loss(Z, N, M, kind, 0.1).value - L.oracle_loss(Z, 0.1, N, M, kind)) <= 1e-9


def test_two_views_reduce_to_infonce(rng):
    for _ in range(50):
        N = int(rng.integers(2, 7))
        Z = unit(rng, 2 * N, 8)
        ref = reference_infonce(Z, 0.2)
        for kind in KINDS:
            assert abs(L.poly_window_loss(Z, N, 2, kind, 0.2).value - ref) <= 1e-12
        assert L.oracle_loss(Z, 0.2, N, 2, "geometric") == pytest.approx(L.oracle_loss(Z, 0.2, N, 2, "arithmetic"), abs=1e-14)


def test_oracle_guard(rng):
    Z = unit(rng, 66, 4)
    with pytest.raises(GuardError):
        L.oracle_loss(Z, 0.1, 33, 2, "geometric")


def test_fp32_input_is_evaluated_in_fp64(rng):
    Z = unit(rng, 12, 8)
    z32 = Z.astype(np.float32)
    out = L.poly_window_loss(z32, 3, 4, "geometric", 0.05)
    assert out.grad_Z.dtype == np.float64
    ref = L.oracle_loss(z32.astype(np.float64), 0.05, 3, 4, "geometric")
    assert abs(out.value - ref) <= 1e-9


def test_low_temperature_is_stable(rng):
    Z = unit(rng, 16, 4)
    for kind in KINDS:
        out = L.poly_window_loss(Z, 4, 4, kind, 1e-3)
        assert math.isfinite(out.value) and np.isfinite(out.grad_Z).all()


@settings(max_examples=60, deadline=None)
@given(
    N=st.integers(2, 4),
    M=st.integers(2, 4),
    d=st.integers(2, 8),
    tau=st.sampled_from([0.05, 0.1, 0.5, 1.0]),
    seed=st.integers(0, 2**31),
)
def test_geometric_never_below_arithmetic(N, M, d, tau, seed):
    Z = unit(np.random.default_rng(seed), N * M, d)
    geo = L.poly_window_loss(Z, N, M, "geometric", tau).value
    ari = L.poly_window_loss(Z, N, M, "arithmetic", tau).value
    assert geo >= ari - 1e-12


@settings(max_examples=40, deadline=None)
@given(N=st.integers(2, 4), M=st.integers(2, 4), seed=st.integers(0, 2**31))
def test_permutation_invariance(N, M, seed):
    rng = np.random.default_rng(seed)
    Z = unit(rng, N * M, 5).reshape(N, M, 5)
    perm_n = rng.permutation(N)
    shuffled = np.stack([Z[n][rng.permutation(M)] for n in perm_n]).reshape(N * M, 5)
    for kind in KINDS:
        a = L.poly_window_loss(Z.reshape(N * M, 5), N, M, kind, 0.1).value
        b = L.poly_window_loss(shuffled, N, M, kind, 0.1).value
        assert abs(a - b) <= 1e-12


@pytest.mark.parametrize("tau", [0.05, 0.1, 0.5, 1.0])
def test_degenerate_value_is_temperature_free(tau):
    Z = np.tile(unit(np.random.default_rng(0), 1, 3), (12, 1))
    for kind in KINDS:
        assert L.poly_window_loss(Z, 3, 4, kind, tau).value == pytest.approx(math.log(11), abs=1e-9)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("N,M", [(2, 2), (3, 4), (4, 3)])
def test_gradient_matches_finite_differences(rng, kind, N, M):
    Z = unit(rng, N * M, 4)
    assert L.loss_grad_check(Z, 0.1, N, M, kind) <= 1e-4


@pytest.mark.parametrize("kind", KINDS)
def test_duplicate_window_gets_equal_gradient(rng, kind):
    Z = unit(rng, 6, 4)
    Z[1] = Z[0]  # sample 0: windows 0 and 1 identical
    g = L.poly_window_loss(Z, 2, 3, kind, 0.2).grad_Z
    # swapping the two rows leaves the loss unchanged, so their gradients coincide
    np.testing.assert_allclose(g[0], g[1], atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
def test_degenerate_point_is_stationary_along_common_direction(kind):
    z = unit(np.random.default_rng(2), 1, 5)
    Z = np.tile(z, (8, 1))
    g = L.poly_window_loss(Z, 4, 2, kind, 0.1).grad_Z
    assert abs(float(np.sum(g * Z))) <= 1e-8


def test_grad_check_guard(rng):
    with pytest.raises(GuardError):
        L.loss_grad_check(unit(rng, 36, 2), 0.1, 6, 6, "geometric")


def test_unknown_kind(rng):
    with pytest.raises(ConfigError):
        L.poly_window_loss(unit(rng, 4, 2), 2, 2, "harmonic")


def test_row_count_mismatch(rng):
    with pytest.raises(InputError):
        L.poly_window_loss(unit(rng, 5, 2), 2, 2)


def test_bench_report_fields():
    rep = L.bench_positive_aggregation(4, 2, 8, repeats=3)
    assert rep["abs_diff"] <= 1e-9
    assert rep["fast_path_ns"] > 0 and rep["oracle_path_ns"] > 0
    assert {r["path"] for r in L.bench_rows(rep)} == {"fast", "oracle"}


def test_bench_medians_agree_across_repeat_counts():
    one = L.bench_positive_aggregation(8, 4, 16, repeats=1)
    many = L.bench_positive_aggregation(8, 4, 16, repeats=101)
    # loose: within a factor of 5 of each other, single-shot timing is noisy
    for key in ("fast_path_ns", "oracle_path_ns"):
        assert many[key] / 5 <= one[key] <= many[key] * 5
