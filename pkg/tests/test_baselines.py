import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bmfkit.baselines import (
    AlsConfig,
    NmfConfig,
    als_fit,
    als_objective,
    als_sgd_step,
    nmf_mu_fit,
    per_example_gradients,
)
from bmfkit.core import FactorState, MaskedMatrix
from bmfkit.errors import InputError, LinearSolveError, ParameterError


def _data(seed, M=8, N=6, p_obs=1.0):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((M, 2)) @ rng.standard_normal((2, N)) + 0.1 * rng.standard_normal((M, N))
    return MaskedMatrix(A, rng.random((M, N)) < p_obs)


def test_rank_one_recovery_with_tiny_ridge():
    for s in range(5):
        rng = np.random.default_rng(s)
        A = MaskedMatrix(np.outer(rng.standard_normal(8), rng.standard_normal(6)))
        _, hist = als_fit(A, AlsConfig(K=1, lambda_w=1e-9, lambda_z=1e-9), rng)
        assert hist[-1] < 1e-8


@pytest.mark.parametrize("rebalance", [True, False])
def test_regularized_objective_is_monotone(rebalance):
    for s in range(10):
        A = _data(s, p_obs=0.7)
        cfg = AlsConfig(K=3, lambda_w=0.1, lambda_z=0.3, max_iters=50, rebalance=rebalance)
        objs = []
        als_fit(A, cfg, np.random.default_rng(s),
                callback=lambda it, S: objs.append(als_objective(A, S, cfg.lambda_w, cfg.lambda_z)))
        assert np.all(np.diff(objs) <= 1e-12 * np.abs(objs[:-1]))


def test_rebalance_leaves_product_and_balances_norms():
    A = _data(1)
    cfg = AlsConfig(K=2, lambda_w=0.2, lambda_z=0.05, max_iters=3)
    S, _ = als_fit(A, cfg, np.random.default_rng(1))
    np.testing.assert_allclose(cfg.lambda_w * np.sum(S.W ** 2, axis=0),
                               cfg.lambda_z * np.sum(S.Z ** 2, axis=1), rtol=1e-10)


def test_one_sweep_strictly_decreases_loss():
    A = _data(2)
    _, hist = als_fit(A, AlsConfig(K=6, lambda_w=0.1, lambda_z=0.1, max_iters=1, mode="full"),
                      np.random.default_rng(0))
    assert hist[1] < hist[0]


def test_masked_equals_full_bitwise_on_full_mask():
    A = _data(3)
    for rebalance in (True, False):
        a = als_fit(A, AlsConfig(K=2, mode="full", max_iters=20, rebalance=rebalance), np.random.default_rng(4))
        b = als_fit(A, AlsConfig(K=2, mode="masked", max_iters=20, rebalance=rebalance), np.random.default_rng(4))
        np.testing.assert_array_equal(a[0].W, b[0].W)
        np.testing.assert_array_equal(a[1], b[1])


def test_nan_poisoned_unobserved_entries_stay_isolated():
    rng = np.random.default_rng(5)
    vals = rng.standard_normal((10, 8))
    mask = rng.random((10, 8)) < 0.5
    vals[~mask] = np.nan
    A = MaskedMatrix(vals, mask)
    for mode in ("masked", "gradient", "sgd"):
        S, hist = als_fit(A, AlsConfig(K=2, mode=mode, max_iters=10), np.random.default_rng(0))
        assert np.all(np.isfinite(S.W)) and np.all(np.isfinite(S.Z)) and np.all(np.isfinite(hist))


def test_full_mode_needs_full_mask():
    A = _data(6, p_obs=0.5)
    with pytest.raises(InputError):
        als_fit(A, AlsConfig(mode="full"), np.random.default_rng(0))


def test_singular_normal_matrix_without_ridge_is_reported():
    A = MaskedMatrix(np.ones((4, 3)))
    init = FactorState(np.zeros((4, 2)), np.zeros((2, 3)))
    with pytest.raises(LinearSolveError):
        als_fit(A, AlsConfig(K=2, lambda_w=0.0, lambda_z=0.0, mode="full"), np.random.default_rng(0), init=init)


def test_config_validation():
    for bad in (dict(K=0), dict(lambda_w=-1), dict(tol=0), dict(max_iters=0), dict(mode="x"), dict(eta_w=-1)):
        with pytest.raises(ParameterError):
            AlsConfig(**bad)
    for bad in (dict(K=0), dict(eps=0), dict(lambda_z=-1)):
        with pytest.raises(ParameterError):
            NmfConfig(**bad)


def test_bias_layout_pins_ones():
    A = _data(7, p_obs=0.8)
    S, hist = als_fit(A, AlsConfig(K=2, bias=True, max_iters=30), np.random.default_rng(0))
    assert S.W.shape == (8, 4) and S.Z.shape == (4, 6)
    np.testing.assert_array_equal(S.W[:, -1], 1.0)
    np.testing.assert_array_equal(S.Z[0], 1.0)
    assert hist[-1] < hist[0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), lw=st.floats(0, 2), lz=st.floats(0, 2))
def test_per_example_gradient_matches_finite_difference(seed, lw, lz):
    rng = np.random.default_rng(seed)
    w, z, a = rng.standard_normal(3), rng.standard_normal(3), float(rng.standard_normal())
    f = lambda w_, z_: (a - w_ @ z_) ** 2 + lw * w_ @ w_ + lz * z_ @ z_  # noqa: E731
    gw, gz = per_example_gradients(w, z, a, lw, lz)
    h = 1e-6
    eye = np.eye(3)
    fw = np.array([(f(w + h * e, z) - f(w - h * e, z)) / (2 * h) for e in eye])
    fz = np.array([(f(w, z + h * e) - f(w, z - h * e)) / (2 * h) for e in eye])
    scale = max(1.0, np.abs(fw).max(), np.abs(fz).max())
    assert np.abs(gw - fw).max() / scale < 1e-5
    assert np.abs(gz - fz).max() / scale < 1e-5


def test_sgd_step_edge_cases():
    S = FactorState(np.array([[1.0, 2.0]]), np.array([[0.5], [1.5]]))
    same = als_sgd_step(S, 1.0, 0, 0, AlsConfig(eta_w=0.0, eta_z=0.0))
    np.testing.assert_array_equal(same.W, S.W)
    np.testing.assert_array_equal(same.Z, S.Z)
    exact = als_sgd_step(S, 3.5, 0, 0, AlsConfig(lambda_w=0.0, lambda_z=0.0, eta_w=0.5, eta_z=0.5))
    np.testing.assert_array_equal(exact.W, S.W)
    moved = als_sgd_step(S, 0.0, 0, 0, AlsConfig(lambda_w=0.0, lambda_z=0.0, eta_w=0.1, eta_z=0.1))
    assert np.linalg.norm(moved.Z - S.Z) == pytest.approx(0.1)
    assert (moved.W @ moved.Z)[0, 0] < 3.5


def test_gradient_modes_reduce_loss():
    A = _data(8)
    for mode in ("gradient", "sgd"):
        _, hist = als_fit(A, AlsConfig(K=2, mode=mode, eta_w=0.02, eta_z=0.02, max_iters=200),
                          np.random.default_rng(1))
        assert hist[-1] < 0.5 * hist[0]


def test_mu_recovers_nonnegative_rank_two():
    rng = np.random.default_rng(9)
    A = MaskedMatrix(rng.random((12, 2)) @ rng.random((2, 10)))
    S, hist = nmf_mu_fit(A, NmfConfig(K=2, max_iters=3000, tol=1e-14), rng)
    # rounding noise near zero loss is measured against the starting loss
    assert np.all(np.diff(hist) <= 1e-12 * hist[0])
    assert hist[-1] < 1e-4 * np.sum(A.values ** 2)
    assert S.W.min() >= 0 and S.Z.min() >= 0


def test_mu_regularized_stays_nonnegative_and_masked():
    rng = np.random.default_rng(10)
    vals = rng.random((9, 7)) * 3
    mask = rng.random((9, 7)) < 0.7
    vals[~mask] = -50.0
    S, _ = nmf_mu_fit(MaskedMatrix(vals, mask), NmfConfig(K=3, lambda_w=0.5, lambda_z=0.5, max_iters=100), rng)
    assert S.W.min() >= 0 and S.Z.min() >= 0


def test_mu_zero_column_init_is_guarded():
    A = MaskedMatrix(np.random.default_rng(11).random((5, 4)))
    init = FactorState(np.c_[np.zeros(5), np.ones(5)], np.ones((2, 4)))
    S, hist = nmf_mu_fit(A, NmfConfig(K=2, max_iters=20), np.random.default_rng(0), init=init)
    assert np.all(np.isfinite(hist))
    np.testing.assert_array_equal(S.W[:, 0], 0.0)


def test_mu_rejects_negative_data():
    with pytest.raises(InputError):
        nmf_mu_fit(MaskedMatrix(-np.ones((2, 2))), NmfConfig(), np.random.default_rng(0))
