import numpy as np
import pytest
from scipy import stats

from bmfkit.core import FactorState, GibbsConfig, MaskedMatrix
from bmfkit.distributions import NiwParams, niw_posterior
from bmfkit.errors import DegenerateError, ParameterError
from bmfkit.gibbs_rmf import (
    RmfHyper,
    fit_rmf,
    ggg_sample_w_entry,
    ggg_w_posterior,
    ggga_lambda_posterior,
    gggm_w_row_posterior,
    gggw_sample_hyper,
    gvg_w_posterior,
    sigma2_posterior,
)
from conftest import grid_moments


def _sse_w(A, W, Z, m, k, x):
    x = np.atleast_1d(x)
    out = np.zeros_like(x)
    for i, v in enumerate(x):
        Wv = W.copy()
        Wv[m, k] = v
        r = np.where(A.mask, A.values - Wv @ Z, 0.0)
        out[i] = np.sum(r * r)
    return out


def _state(seed, M=3, N=3, K=2):
    rng = np.random.default_rng(seed)
    A = MaskedMatrix(rng.standard_normal((M, N)), rng.random((M, N)) < 0.8)
    return A, FactorState(rng.standard_normal((M, K)), rng.standard_normal((K, N)), 0.7)


def test_ggg_scalar_example():
    A = MaskedMatrix([[2.0]])
    S = FactorState(np.zeros((1, 1)), np.ones((1, 1)), 1.0)
    mean, var = ggg_w_posterior(0, 0, A, S, RmfHyper(lambda_w=1.0))
    assert (mean, 1 / var) == (1.0, 2.0)
    gm, gv = grid_moments(lambda x: -0.5 * (2 - x) ** 2 - 0.5 * x ** 2, -np.inf, np.inf)
    assert gm == pytest.approx(1.0, rel=1e-6) and gv == pytest.approx(0.5, rel=1e-6)


def test_ggg_unobserved_row_is_prior():
    A, S = _state(0)
    A.mask[1] = False
    assert ggg_w_posterior(1, 0, A, S, RmfHyper(lambda_w=4.0)) == (0.0, 0.25)


def test_ggg_huge_noise_recovers_prior():
    A, S = _state(1)
    S.sigma2 = 1e12
    mean, var = ggg_w_posterior(0, 1, A, S, RmfHyper(lambda_w=0.5))
    assert abs(mean) < 1e-5 and 1 / var == pytest.approx(0.5, rel=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_ggg_matches_grid_posterior(seed):
    A, S = _state(seed)
    m, k, lam = seed % 3, seed % 2, 0.3 + seed
    mean, var = ggg_w_posterior(m, k, A, S, RmfHyper(lambda_w=lam))
    gm, gv = grid_moments(lambda x: -_sse_w(A, S.W, S.Z, m, k, x) / (2 * S.sigma2) - 0.5 * lam * x * x,
                          -np.inf, np.inf)
    assert mean == pytest.approx(gm, rel=1e-3, abs=1e-9)
    assert var == pytest.approx(gv, rel=1e-3)


def test_ggg_variance_shrinks_as_z_grows():
    A, S = _state(2)
    v0 = ggg_w_posterior(0, 0, A, S, RmfHyper())[1]
    S.Z[0] *= 2
    assert ggg_w_posterior(0, 0, A, S, RmfHyper())[1] < v0


def test_ggg_draws_follow_conditional():
    A, S = _state(3)
    h = RmfHyper(lambda_w=1.0)
    mean, var = ggg_w_posterior(2, 1, A, S, h)
    rng = np.random.default_rng(0)
    x = np.array([ggg_sample_w_entry(2, 1, A, S, h, rng) for _ in range(4000)])
    assert stats.kstest(x, stats.norm(mean, np.sqrt(var)).cdf).pvalue > 0.01


def test_gggm_scalar_reduction_and_dense_assembly():
    A, S = _state(4, K=1)
    lam = 0.8
    P, hv = gggm_w_row_posterior(0, A, S, lam * np.eye(1))
    mean, var = ggg_w_posterior(0, 0, A, S, RmfHyper(lambda_w=lam))
    assert 1 / P[0, 0] == pytest.approx(var, rel=1e-14)
    assert hv[0] / P[0, 0] == pytest.approx(mean, rel=1e-12)

    rng = np.random.default_rng(5)
    A = MaskedMatrix(rng.standard_normal((2, 3)))
    S = FactorState(rng.standard_normal((2, 2)), rng.standard_normal((2, 3)), 0.5)
    P, hv = gggm_w_row_posterior(1, A, S, lam * np.eye(2))
    want_P = lam * np.eye(2) + sum(np.outer(S.Z[:, j], S.Z[:, j]) for j in range(3)) / 0.5
    want_h = sum(A.values[1, j] * S.Z[:, j] for j in range(3)) / 0.5
    np.testing.assert_allclose(P, want_P, rtol=1e-13)
    np.testing.assert_allclose(hv, want_h, rtol=1e-13)


def test_gggm_empty_row_is_prior():
    A, S = _state(6)
    A.mask[0] = False
    P, hv = gggm_w_row_posterior(0, A, S, 3.0 * np.eye(2))
    np.testing.assert_array_equal(P, 3.0 * np.eye(2))
    np.testing.assert_array_equal(hv, 0.0)


def test_sigma2_posterior_examples():
    A = MaskedMatrix(np.ones((2, 2)))
    S = FactorState(np.zeros((2, 1)), np.zeros((1, 2)))
    assert sigma2_posterior(A, S, RmfHyper()) == (3.0, 3.0)
    exact = FactorState(np.ones((2, 1)), np.ones((1, 2)))
    assert sigma2_posterior(A, exact, RmfHyper(alpha_sigma=2.0, beta_sigma=0.5)) == (4.0, 0.5)


def test_ard_lambda_examples():
    zero = FactorState(np.zeros((2, 1)), np.zeros((1, 2)))
    g = ggga_lambda_posterior(0, zero, RmfHyper(ard_alpha=2.0, ard_beta=0.7))
    assert (g.shape, g.rate) == (4.0, 0.7)
    ones = FactorState(np.ones((2, 1)), np.ones((1, 2)))
    g = ggga_lambda_posterior(0, ones, RmfHyper())
    assert (g.shape, g.rate) == (3.0, 3.0)
    twice = FactorState(2 * ones.W, 2 * ones.Z)
    assert ggga_lambda_posterior(0, twice, RmfHyper()).rate > g.rate


def test_gggw_hyper_uses_niw_posterior():
    X = np.random.default_rng(7).standard_normal((40, 2)) + [3.0, -1.0]
    prior = NiwParams.default(2)
    post = niw_posterior(prior, X)
    mus = np.array([gggw_sample_hyper(X, prior, np.random.default_rng(s))[0] for s in range(400)])
    np.testing.assert_allclose(mus.mean(axis=0), post.m0, atol=0.05)


def test_gvg_gamma_zero_is_flat_ggg():
    A, S = _state(8, K=3)
    a = gvg_w_posterior(1, 2, A, S, RmfHyper(gamma_vol=0.0))
    b = ggg_w_posterior(1, 2, A, S, RmfHyper(lambda_w=0.0))
    assert a == pytest.approx(b, rel=1e-13)


def test_gvg_two_column_hand_determinant():
    A, S = _state(9, M=3, K=2)
    g = 0.4
    mean, var = gvg_w_posterior(0, 0, A, S, RmfHyper(gamma_vol=g))
    # with K=2 the other column is a vector c: D = c.c and the adjugate is 1
    c = S.W[:, 1]
    obs = A.mask[0]
    z = S.Z[0, obs]
    resid = A.values[0, obs] - S.W[0, 1] * S.Z[1, obs]
    prec = z @ z / S.sigma2 + g * (c @ c - c[0] ** 2)
    lin = z @ resid / S.sigma2 + g * c[0] * (c[1:] @ S.W[1:, 0])
    assert var == pytest.approx(1 / prec, rel=1e-12)
    assert mean == pytest.approx(lin / prec, rel=1e-12)


def test_gvg_matches_grid_posterior_of_half_gamma_volume():
    A, S = _state(10, K=2)
    g = 0.6

    def logp(x):
        out = -_sse_w(A, S.W, S.Z, 2, 1, x) / (2 * S.sigma2)
        for i, v in enumerate(np.atleast_1d(x)):
            W = S.W.copy()
            W[2, 1] = v
            out[i] -= 0.5 * g * np.linalg.det(W.T @ W)
        return out

    mean, var = gvg_w_posterior(2, 1, A, S, RmfHyper(gamma_vol=g))
    gm, gv = grid_moments(logp, -np.inf, np.inf)
    assert mean == pytest.approx(gm, rel=1e-3, abs=1e-9)
    assert var == pytest.approx(gv, rel=1e-3)


def test_gvg_volume_pulls_toward_smaller_determinant():
    A = MaskedMatrix(np.zeros((3, 3)), np.zeros((3, 3), dtype=bool))
    W = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    S = FactorState(W, np.ones((2, 3)))
    mean, _ = gvg_w_posterior(2, 1, A, S, RmfHyper(gamma_vol=1.0))
    det = lambda v: np.linalg.det(np.c_[W[:, 0], [0.0, 1.0, v]].T @ np.c_[W[:, 0], [0.0, 1.0, v]])  # noqa: E731
    assert det(mean) < det(W[2, 1])


def test_gvg_rejects_single_column_and_negative_precision():
    A, S = _state(11, K=1)
    with pytest.raises(ParameterError):
        gvg_w_posterior(0, 0, A, S, RmfHyper())
    A, S = _state(11, K=2)
    A.mask[:] = False
    S.W[:] = [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
    with pytest.raises(DegenerateError):
        gvg_w_posterior(0, 0, A, S, RmfHyper(gamma_vol=1.0))


def _lowrank(seed, M=30, N=20, K=5, noise=0.1):
    rng = np.random.default_rng(seed)
    return MaskedMatrix(rng.standard_normal((M, K)) @ rng.standard_normal((K, N)) + noise * rng.standard_normal((M, N)))


def test_ggg_reaches_noise_floor():
    tr = fit_rmf("GGG", _lowrank(0), cfg=GibbsConfig(iters=500, burn_in=250, seed=1), K=5)
    assert tr.mean_post_burn_in_loss() <= 0.02


@pytest.mark.parametrize("model", ["GGGM", "GGGW", "GVG"])
def test_other_models_fit(model):
    A = _lowrank(1, K=3)
    h = RmfHyper(gamma_vol=1e-3)
    tr = fit_rmf(model, A, h, GibbsConfig(iters=200, burn_in=100, seed=2), K=3)
    assert tr.mean_post_burn_in_loss() < 0.05
    assert np.all(np.isfinite(tr.losses))


@pytest.mark.parametrize("seed", range(3))
def test_ard_switches_off_extra_factors(seed):
    # signal well above the unit rate of the ARD prior, noise too large to be fit cheaply
    rng = np.random.default_rng(seed)
    A = MaskedMatrix(10 * rng.standard_normal((30, 3)) @ rng.standard_normal((3, 20))
                     + rng.standard_normal((30, 20)))
    tr = fit_rmf("GGGA", A, cfg=GibbsConfig(iters=500, burn_in=250, seed=seed), K=10)
    lam = np.sort(tr.posterior_mean("lambda"))
    assert np.sum(lam > 10 * np.median(lam[:3])) >= 5


def test_zero_iterations_returns_initial_state():
    A = _lowrank(2)
    init = FactorState(np.ones((30, 2)), np.ones((2, 20)), 2.0)
    tr = fit_rmf("GGG", A, cfg=GibbsConfig(iters=0, burn_in=0), init=init)
    assert tr.losses.size == 0
    np.testing.assert_array_equal(tr.state.W, init.W)
    assert tr.state.sigma2 == 2.0


@pytest.mark.parametrize("model", ["GGG", "GGGM", "GGGA", "GGGW", "GVG"])
def test_chains_are_reproducible(model):
    A = _lowrank(3, M=8, N=6, K=2)
    cfg = GibbsConfig(iters=5, burn_in=1, seed=11)
    a, b = fit_rmf(model, A, cfg=cfg, K=2), fit_rmf(model, A, cfg=cfg, K=2)
    np.testing.assert_array_equal(a.losses, b.losses)
    np.testing.assert_array_equal(a.state.W, b.state.W)


def test_unknown_model_and_missing_rank():
    A = _lowrank(4)
    with pytest.raises(ParameterError):
        fit_rmf("XYZ", A, K=2)
    with pytest.raises(ParameterError):
        fit_rmf("GGG", A)
    with pytest.raises(ParameterError):
        RmfHyper(alpha_sigma=0.0)
