import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from bmfkit.core import MaskedMatrix
from bmfkit.distributions import (
    DirichletParams,
    GammaParams,
    GtnParams,
    InvGammaParams,
    NiwParams,
    RnParams,
    gamma_precision_posterior,
    gtn_cdf,
    gtn_moments,
    gtn_pdf,
    invgamma_variance_posterior,
    niw_posterior,
    niw_posterior_sumsq,
    norm_cdf,
    norm_ppf,
    rgtn,
    rn_normalizer,
    rn_pdf,
    rn_to_gtn,
    sample_dirichlet,
    sample_gtn,
    sample_inverse_wishart,
    sample_mvn_precision,
    sample_niw,
    sample_wishart,
)
from bmfkit.errors import DimensionError, ParameterError, UnderflowError


def _se(x):
    return x.std() / np.sqrt(x.size)


def test_norm_cdf_accuracy():
    x = np.linspace(-8, 8, 401)
    np.testing.assert_allclose(norm_cdf(x), stats.norm.cdf(x), atol=1e-15)
    p = np.linspace(1e-6, 1 - 1e-6, 301)
    np.testing.assert_allclose(norm_cdf(norm_ppf(p)), p, atol=1e-12)


def test_gtn_symmetric_interval_mean():
    x = sample_gtn(GtnParams(0.0, 1.0, -1.0, 1.0), np.random.default_rng(0), size=100_000)
    assert abs(x.mean()) < 3 * _se(x)


def test_tn_mean_matches_half_normal():
    x = sample_gtn(GtnParams(0.0, 1.0, 0.0, np.inf), np.random.default_rng(1), size=100_000)
    assert abs(x.mean() - 0.79788) < 3 * _se(x)


def test_gtn_far_parent_stays_in_support():
    x = sample_gtn(GtnParams(5.0, 4.0, -1.0, 1.0), np.random.default_rng(2), size=20_000)
    assert x.min() >= -1.0 and x.max() <= 1.0
    assert x.mean() > 0.8


@settings(max_examples=60, deadline=None)
@given(mu=st.floats(-20, 20), tau=st.floats(0.01, 100), a=st.floats(-10, 10), w=st.floats(0.01, 10),
       seed=st.integers(0, 2**31))
def test_rgtn_support_property(mu, tau, a, w, seed):
    x = rgtn(np.full(50, mu), tau, a, a + w, np.random.default_rng(seed))
    assert np.all(x >= a) and np.all(x <= a + w) and np.all(np.isfinite(x))


def test_gtn_moments_examples():
    assert gtn_moments(GtnParams(0.0, 1.0)) == pytest.approx((0.0, 1.0))
    m, v = gtn_moments(GtnParams(0.0, 1.0, 0.0, np.inf))
    assert m == pytest.approx(np.sqrt(2 / np.pi), abs=1e-12)
    assert v == pytest.approx(1 - 2 / np.pi, abs=1e-12)
    assert gtn_moments(GtnParams(0.0, 3.0, -0.7, 0.7))[0] == pytest.approx(0.0, abs=1e-14)


@pytest.mark.parametrize("p", [GtnParams(0.3, 2.0, -1.0, 2.0), GtnParams(-3.0, 1.0, 0.0, np.inf),
                               GtnParams(12.0, 0.5, -np.inf, 1.0), GtnParams(0.0, 1.0, 6.0, 9.0)])
def test_gtn_moments_against_quadrature(p):
    lo, hi = max(p.a, p.mu - 40 / np.sqrt(p.tau)), min(p.b, p.mu + 40 / np.sqrt(p.tau))
    f = lambda x: gtn_pdf(x, p)  # noqa: E731
    mass = integrate.quad(f, lo, hi, points=[p.mu] if lo < p.mu < hi else None, limit=200)[0]
    mean = integrate.quad(lambda x: x * f(x), lo, hi, limit=200)[0] / mass
    var = integrate.quad(lambda x: (x - mean) ** 2 * f(x), lo, hi, limit=200)[0] / mass
    m, v = gtn_moments(p)
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert m == pytest.approx(mean, rel=1e-7, abs=1e-9)
    assert v == pytest.approx(var, rel=1e-6)


def test_gtn_cdf_matches_scipy():
    p = GtnParams(0.5, 4.0, -0.25, 1.5)
    sd = 0.5
    x = np.linspace(-0.25, 1.5, 50)
    ref = stats.truncnorm((p.a - p.mu) / sd, (p.b - p.mu) / sd, loc=p.mu, scale=sd).cdf(x)
    np.testing.assert_allclose(gtn_cdf(x, p), ref, atol=1e-12)


def test_gtn_underflow_and_parameter_errors():
    with pytest.raises(UnderflowError):
        gtn_moments(GtnParams(0.0, 1.0, 40.0, 41.0))
    with pytest.raises(ParameterError):
        GtnParams(0.0, -1.0)
    with pytest.raises(ParameterError):
        GtnParams(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ParameterError):
        rgtn(0.0, 0.0, 0.0, 1.0, np.random.default_rng(0))


def test_rn_to_gtn_examples():
    assert rn_to_gtn(RnParams(1.0, 2.0, 1.0)) == GtnParams(0.5, 2.0, 0.0, np.inf)
    assert rn_to_gtn(RnParams(0.0, 1.0, 1.0)).mu == -1.0
    assert rn_to_gtn(RnParams(0.0, 1.0, 1e-12)).mu == pytest.approx(0.0, abs=1e-11)


def test_rn_density_matches_gaussian_times_exponential():
    p = RnParams(0.7, 1.5, 0.8)
    x = np.linspace(0.0, 6.0, 200)
    raw = stats.norm.pdf(x, p.mu, 1 / np.sqrt(p.tau)) * stats.expon.pdf(x, scale=1 / p.lam)
    np.testing.assert_allclose(raw, rn_normalizer(p) * rn_pdf(x, p), rtol=1e-10)


def test_wishart_mean_and_chi2_reduction():
    rng = np.random.default_rng(3)
    w = np.array([sample_wishart(np.eye(1), 3, rng)[0, 0] for _ in range(10_000)])
    assert abs(w.mean() - 3.0) < 3 * _se(w)
    S = np.array([[1.0, 0.3], [0.3, 2.0]])
    draws = np.array([sample_wishart(S, 4.5, rng) for _ in range(10_000)])
    np.testing.assert_allclose(draws.mean(axis=0), 4.5 * S, rtol=0.05, atol=0.05)
    assert np.all(np.linalg.eigvalsh(draws) > 0)
    np.testing.assert_array_equal(draws, np.transpose(draws, (0, 2, 1)))


def test_wishart_rejects_low_dof():
    with pytest.raises(ParameterError):
        sample_wishart(np.eye(3), 1.5, np.random.default_rng(0))


def test_inverse_wishart_roundtrip():
    S = np.array([[2.0, 0.4], [0.4, 1.0]])
    a = sample_inverse_wishart(S, 5.0, np.random.default_rng(9))
    b = np.linalg.inv(sample_wishart(np.linalg.inv(S), 5.0, np.random.default_rng(9)))
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_niw_concentrates_at_prior_mean():
    rng = np.random.default_rng(4)
    p = NiwParams(np.zeros(2), 1e6, 4.0, np.eye(2))
    mus = np.array([sample_niw(p, rng)[0] for _ in range(1000)])
    assert np.abs(mus).max() < 0.01


def test_niw_posterior_examples():
    prior = NiwParams(np.array([1.0, -1.0]), 2.0, 4.0, np.eye(2))
    assert niw_posterior(prior, np.empty((0, 2))) is prior
    one = niw_posterior(prior, prior.m0[None])
    np.testing.assert_allclose(one.m0, prior.m0)
    np.testing.assert_allclose(one.S0, prior.S0)
    assert (one.kappa0, one.nu0) == (3.0, 5.0)
    X = np.random.default_rng(5).standard_normal((5, 2))
    a, b = niw_posterior(prior, X), niw_posterior_sumsq(prior, X)
    np.testing.assert_allclose(a.S0, b.S0, atol=1e-10)
    np.testing.assert_allclose(a.m0, b.m0, atol=1e-12)
    with pytest.raises(DimensionError):
        niw_posterior(prior, np.ones((3, 3)))


def test_niw_batch_equals_sequential():
    prior = NiwParams.default(3)
    X = np.random.default_rng(6).standard_normal((7, 3))
    seq = prior
    for x in X:
        seq = niw_posterior(seq, x[None])
    batch = niw_posterior(prior, X)
    np.testing.assert_allclose(seq.S0, batch.S0, atol=1e-10)
    np.testing.assert_allclose(seq.m0, batch.m0, atol=1e-12)
    assert (seq.kappa0, seq.nu0) == (batch.kappa0, batch.nu0)


def test_dirichlet_examples():
    rng = np.random.default_rng(7)
    for alpha in ([10.0, 10.0, 10.0], [15.0, 5.0, 2.0]):
        a = np.array(alpha)
        x = sample_dirichlet(a, rng, size=100_000)
        assert x.min() > 0
        np.testing.assert_allclose(x.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(x.mean(axis=0), a / a.sum(), atol=3 * x.std(axis=0).max() / np.sqrt(1e5))


def test_dirichlet_flat_is_uniform_on_simplex():
    x = sample_dirichlet(DirichletParams(np.ones(3)), np.random.default_rng(8), size=60_000)
    # the simplex splits into 4 congruent triangles by its edge midpoints
    corner = np.argmax(x > 0.5, axis=1)
    cell = np.where((x > 0.5).any(axis=1), corner, 3)
    counts = np.bincount(cell, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.01


def test_gamma_and_invgamma_posteriors_agree():
    A = MaskedMatrix(np.ones((2, 2)))
    g = gamma_precision_posterior(GammaParams(1.0, 1.0), A, np.zeros((2, 2)))
    ig = invgamma_variance_posterior(InvGammaParams(1.0, 1.0), A, np.zeros((2, 2)))
    assert (g.shape, g.rate) == (3.0, 3.0) == (ig.shape, ig.scale)
    same = gamma_precision_posterior(GammaParams(2.0, 0.5), A, A.values)
    assert (same.shape, same.rate) == (4.0, 0.5)
    empty = MaskedMatrix(np.ones((2, 2)), np.zeros((2, 2), dtype=bool))
    assert gamma_precision_posterior(GammaParams(2.0, 0.5), empty, np.zeros((2, 2))) == GammaParams(2.0, 0.5)


def test_mvn_precision_moments():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    m = np.array([1.0, -2.0])
    rng = np.random.default_rng(10)
    x = np.array([sample_mvn_precision(P @ m, P, rng) for _ in range(20_000)])
    np.testing.assert_allclose(x.mean(axis=0), m, atol=0.03)
    np.testing.assert_allclose(np.cov(x.T), np.linalg.inv(P), atol=0.03)
