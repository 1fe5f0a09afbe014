"""Densities, moments, conjugate updates and samplers used by the Gibbs samplers.

Conventions: Gamma is shape/rate, inverse-Gamma is shape/scale, Gaussians are
parameterized by mean and precision ``tau`` unless a name says otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .core import MaskedMatrix
from .errors import DimensionError, ParameterError, UnderflowError

_SQRT2 = np.sqrt(2.0)
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)
# Standardized lower bound beyond which inverse-CDF sampling loses precision.
_TAIL = 5.0


# -- standard normal helpers ------------------------------------------------

def norm_cdf(x):
    """Standard normal CDF via the complementary error function."""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


def norm_sf(x):
    """Standard normal survival function ``1 - Phi(x)`` without cancellation."""
    return 0.5 * special.erfc(np.asarray(x, dtype=float) / _SQRT2)


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def norm_ppf(p):
    """Standard normal quantile."""
    return special.ndtri(p)


def _xpdf(x):
    # x * phi(x) with the limit 0 at +-inf
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore"):
        out = x * norm_pdf(x)
    return np.where(np.isfinite(x), out, 0.0)


# -- parameter containers ---------------------------------------------------

@dataclass(frozen=True)
class GtnParams:
    """General-truncated-normal: parent mean ``mu``, precision ``tau``, support [a, b]."""

    mu: float
    tau: float
    a: float = -np.inf
    b: float = np.inf

    def __post_init__(self) -> None:
        if not (self.tau > 0) or not np.isfinite(self.tau):
            raise ParameterError(f"tau must be positive and finite, got {self.tau}")
        if not np.isfinite(self.mu):
            raise ParameterError(f"mu must be finite, got {self.mu}")
        if np.isnan(self.a) or np.isnan(self.b) or not (self.a < self.b):
            raise ParameterError(f"need a < b, got a={self.a}, b={self.b}")

    def standardized(self) -> tuple[float, float]:
        s = np.sqrt(self.tau)
        return (self.a - self.mu) * s, (self.b - self.mu) * s


@dataclass(frozen=True)
class RnParams:
    """Rectified-normal: parent mean, parent precision and exponential rate."""

    mu: float
    tau: float
    lam: float

    def __post_init__(self) -> None:
        if not (self.tau > 0):
            raise ParameterError(f"tau must be positive, got {self.tau}")
        if not (self.lam >= 0):
            raise ParameterError(f"lambda must be nonnegative, got {self.lam}")


@dataclass(frozen=True)
class NiwParams:
    """Normal-inverse-Wishart quadruple ``(m0, kappa0, nu0, S0)``."""

    m0: np.ndarray
    kappa0: float
    nu0: float
    S0: np.ndarray

    def __post_init__(self) -> None:
        m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        S0 = np.atleast_2d(np.asarray(self.S0, dtype=float))
        object.__setattr__(self, "m0", m0)
        object.__setattr__(self, "S0", S0)
        D = m0.shape[0]
        if m0.ndim != 1 or S0.shape != (D, D):
            raise DimensionError(f"m0 {m0.shape} and S0 {S0.shape} do not conform")
        if not (self.kappa0 > 0):
            raise ParameterError("kappa0 must be positive")
        if not (self.nu0 > D - 1):
            raise ParameterError(f"nu0 must exceed D-1={D - 1}, got {self.nu0}")
        if np.max(np.abs(S0 - S0.T), initial=0.0) > 1e-12 * max(1.0, np.abs(S0).max()):
            raise ParameterError("S0 must be symmetric")

    @property
    def dim(self) -> int:
        return self.m0.shape[0]

    @classmethod
    def default(cls, D: int) -> "NiwParams":
        """Weakly informative default ``(0, 1, D + 1, I)``."""
        return cls(np.zeros(D), 1.0, D + 1.0, np.eye(D))


@dataclass(frozen=True)
class GammaParams:
    """Gamma with ``shape`` and ``rate``."""

    shape: float
    rate: float

    def __post_init__(self) -> None:
        if not (self.shape > 0) or not (self.rate > 0):
            raise ParameterError(f"Gamma needs positive shape/rate, got {self}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class InvGammaParams:
    """Inverse-Gamma with ``shape`` and ``scale``."""

    shape: float
    scale: float

    def __post_init__(self) -> None:
        if not (self.shape > 0) or not (self.scale > 0):
            raise ParameterError(f"inverse-Gamma needs positive shape/scale, got {self}")


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self) -> None:
        alpha = np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "alpha", alpha)
        if alpha.ndim != 1 or alpha.size < 2:
            raise DimensionError("Dirichlet concentration must be a vector of length >= 2")
        if np.any(~(alpha > 0)):
            raise ParameterError("Dirichlet concentration must be positive")


# -- truncated normal ----------------------------------------------------------

def _std_trunc_normal(alpha: np.ndarray, beta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard normal restricted to [alpha, beta], elementwise."""
    alpha, beta = np.broadcast_arrays(np.asarray(alpha, float), np.asarray(beta, float))
    alpha = alpha.copy()
    beta = beta.copy()
    # Reflect so the interval leans to the right: only the upper tail is hard.
    with np.errstate(invalid="ignore"):
        flip = alpha + beta < 0
    alpha[flip], beta[flip] = -beta[flip], -alpha[flip]
    out = np.empty(alpha.shape)

    body = alpha <= _TAIL
    if np.any(body):
        lo, hi = alpha[body], beta[body]
        u = rng.random(lo.shape)
        z = np.empty(lo.shape)
        pos = lo > 0
        # upper-tail formulation keeps precision when the interval is right of 0
        s_lo, s_hi = norm_sf(lo[pos]), norm_sf(hi[pos])
        z[pos] = -norm_ppf(s_lo - u[pos] * (s_lo - s_hi))
        c_lo, c_hi = norm_cdf(lo[~pos]), norm_cdf(hi[~pos])
        z[~pos] = norm_ppf(c_lo + u[~pos] * (c_hi - c_lo))
        out[body] = np.clip(z, lo, hi)

    tail_idx = np.flatnonzero(~body)
    if tail_idx.size:
        a_t = alpha.ravel()[tail_idx]
        b_t = beta.ravel()[tail_idx]
        res = np.empty(tail_idx.size)
        todo = np.arange(tail_idx.size)
        while todo.size:
            a, b = a_t[todo], b_t[todo]
            narrow = (b - a) <= 2.0 / a
            z = np.empty(todo.size)
            acc = np.empty(todo.size, dtype=bool)
            if np.any(narrow):
                an, bn = a[narrow], b[narrow]
                zn = an + (bn - an) * rng.random(an.size)
                acc[narrow] = rng.random(an.size) <= np.exp(-0.5 * (zn - an) * (zn + an))
                z[narrow] = zn
            wide = ~narrow
            if np.any(wide):
                aw, bw = a[wide], b[wide]
                rate = 0.5 * (aw + np.sqrt(aw * aw + 4.0))
                zw = aw + rng.exponential(1.0 / rate)
                ok = (zw <= bw) & (rng.random(aw.size) <= np.exp(-0.5 * (zw - rate) ** 2))
                acc[wide] = ok
                z[wide] = zw
            res[todo[acc]] = z[acc]
            todo = todo[~acc]
        flat = out.ravel()
        flat[tail_idx] = res
        out = flat.reshape(alpha.shape)

    out[flip] = -out[flip]
    return out


def rgtn(mu, tau, a, b, rng: np.random.Generator) -> np.ndarray:
    """Vectorized GTN draws; all arguments broadcast together.

    Parameters
    ----------
    mu, tau : array_like
        Parent mean and precision (``tau > 0``).
    a, b : array_like
        Support bounds, ``a < b``; infinities allowed.
    """
    mu, tau, a, b = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (mu, tau, a, b)))
    if np.any(~(tau > 0)):
        raise ParameterError("tau must be positive")
    if np.any(~(a < b)):
        raise ParameterError("need a < b")
    s = np.sqrt(tau)
    with np.errstate(invalid="ignore"):
        alpha = (a - mu) * s
        beta = (b - mu) * s
    z = _std_trunc_normal(alpha, beta, rng)
    return np.clip(mu + z / s, a, b)


def rtn(mu, tau, rng: np.random.Generator) -> np.ndarray:
    """Vectorized truncated-normal draws on [0, inf)."""
    return rgtn(mu, tau, 0.0, np.inf, rng)


def sample_gtn(p: GtnParams, rng: np.random.Generator, size=None):
    """Draw from GTN(mu, 1/tau, a, b); a scalar when ``size`` is None."""
    shape = () if size is None else size
    x = rgtn(np.full(shape, p.mu), p.tau, p.a, p.b, rng)
    return float(x) if size is None else x


def _gtn_mass(alpha: float, beta: float) -> float:
    if alpha > 0:
        return float(norm_sf(alpha) - norm_sf(beta))
    return float(norm_cdf(beta) - norm_cdf(alpha))


def gtn_moments(p: GtnParams) -> tuple[float, float]:
    """Mean and variance of GTN(mu, 1/tau, a, b).

    Raises
    ------
    UnderflowError
        When the retained probability mass is below 1e-300.
    """
    alpha, beta = p.standardized()
    with np.errstate(invalid="ignore"):
        lean_left = bool(alpha + beta < 0)
    if lean_left:
        # mirror image has better conditioned mass
        m, v = gtn_moments(GtnParams(-p.mu, p.tau, -p.b, -p.a))
        return -m, v
    Z = _gtn_mass(alpha, beta)
    if not (Z >= 1e-300):
        raise UnderflowError(f"GTN mass {Z:.3g} underflows for alpha={alpha}, beta={beta}")
    d = (norm_pdf(beta) - norm_pdf(alpha)) / Z
    mean = p.mu - d / np.sqrt(p.tau)
    var = (1.0 - (_xpdf(beta) - _xpdf(alpha)) / Z - d * d) / p.tau
    return float(mean), float(var)


def gtn_logpdf(x, p: GtnParams):
    """Log density of GTN; ``-inf`` outside [a, b]."""
    x = np.asarray(x, dtype=float)
    alpha, beta = p.standardized()
    Z = _gtn_mass(alpha, beta)
    if not (Z >= 1e-300):
        raise UnderflowError("GTN mass underflows")
    z = (x - p.mu) * np.sqrt(p.tau)
    lp = -0.5 * z * z - _LOG_SQRT_2PI + 0.5 * np.log(p.tau) - np.log(Z)
    return np.where((x >= p.a) & (x <= p.b), lp, -np.inf)


def gtn_pdf(x, p: GtnParams):
    return np.exp(gtn_logpdf(x, p))


def gtn_cdf(x, p: GtnParams):
    x = np.clip(np.asarray(x, dtype=float), p.a, p.b)
    alpha, beta = p.standardized()
    z = (x - p.mu) * np.sqrt(p.tau)
    Z = _gtn_mass(alpha, beta)
    if alpha > 0:
        return (norm_sf(alpha) - norm_sf(z)) / Z
    return (norm_cdf(z) - norm_cdf(alpha)) / Z


# -- rectified normal ----------------------------------------------------------

def rn_to_gtn(p: RnParams) -> GtnParams:
    """Equivalent TN on [0, inf) with parent mean ``(tau*mu - lam)/tau``."""
    return GtnParams(mu=(p.tau * p.mu - p.lam) / p.tau, tau=p.tau, a=0.0, b=np.inf)


def rn_normalizer(p: RnParams) -> float:
    """Constant ``C`` with N(x|mu,1/tau) * Exp(x|lam) = C * TN(x | (tau*mu-lam)/tau, 1/tau)."""
    shifted = (p.tau * p.mu - p.lam) / np.sqrt(p.tau)
    return float(p.lam * norm_cdf(shifted) * np.exp(-p.mu * p.lam + p.lam ** 2 / (2.0 * p.tau)))


def rn_pdf(x, p: RnParams):
    return gtn_pdf(x, rn_to_gtn(p))


def sample_rn(p: RnParams, rng: np.random.Generator, size=None):
    return sample_gtn(rn_to_gtn(p), rng, size)


# -- gamma family --------------------------------------------------------------

def sample_gamma(shape, rate, rng: np.random.Generator):
    """Gamma draw with shape/rate parameterization."""
    return rng.gamma(shape, 1.0 / np.asarray(rate, dtype=float))


def sample_invgamma(shape, scale, rng: np.random.Generator):
    """Inverse-Gamma draw with shape/scale parameterization."""
    return 1.0 / rng.gamma(shape, 1.0 / np.asarray(scale, dtype=float))


def _residual_stats(A: MaskedMatrix, B) -> tuple[int, float]:
    B = np.asarray(B, dtype=float)
    if B.shape != A.shape:
        raise DimensionError(f"B shape {B.shape} != data shape {A.shape}")
    resid = np.where(A.mask, A.values - B, 0.0)
    return A.n_observed, float(np.sum(resid * resid))


def gamma_precision_posterior(prior: GammaParams, A: MaskedMatrix, B) -> GammaParams:
    """Conjugate Gamma posterior of a Gaussian noise precision.

    shape = alpha + |Omega|/2, rate = beta + sum over Omega of (a - b)^2 / 2.
    """
    n, sse = _residual_stats(A, B)
    return GammaParams(prior.shape + 0.5 * n, prior.rate + 0.5 * sse)


def invgamma_variance_posterior(prior: InvGammaParams, A: MaskedMatrix, B) -> InvGammaParams:
    """Conjugate inverse-Gamma posterior of a Gaussian noise variance."""
    n, sse = _residual_stats(A, B)
    return InvGammaParams(prior.shape + 0.5 * n, prior.scale + 0.5 * sse)


# -- Dirichlet ------------------------------------------------------------------

def sample_dirichlet(alpha: DirichletParams | Sequence[float], rng: np.random.Generator, size=None):
    """Dirichlet draw built from normalized independent Gamma(alpha_k, 1) variables."""
    if not isinstance(alpha, DirichletParams):
        alpha = DirichletParams(np.asarray(alpha, dtype=float))
    shape = (alpha.alpha.size,) if size is None else (size, alpha.alpha.size)
    g = rng.gamma(np.broadcast_to(alpha.alpha, shape))
    return g / g.sum(axis=-1, keepdims=True)


# -- Wishart family --------------------------------------------------------------

def _check_wishart(S, nu) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    D = S.shape[0]
    if S.shape != (D, D):
        raise DimensionError("scale matrix must be square")
    if not (nu > D - 1):
        raise ParameterError(f"degrees of freedom must exceed D-1={D - 1}, got {nu}")
    return S


def sample_wishart(S, nu: float, rng: np.random.Generator) -> np.ndarray:
    """Wishart(S, nu) draw with mean ``nu * S``.

    Integer ``nu`` uses the sum of ``nu`` Gaussian outer products; otherwise
    the Bartlett decomposition.
    """
    S = _check_wishart(S, nu)
    D = S.shape[0]
    L = np.linalg.cholesky(S)
    if float(nu).is_integer():
        X = L @ rng.standard_normal((D, int(nu)))
        W = X @ X.T
    else:
        B = np.zeros((D, D))
        B[np.diag_indices(D)] = np.sqrt(rng.chisquare(nu - np.arange(D)))
        B[np.tril_indices(D, -1)] = rng.standard_normal(D * (D - 1) // 2)
        LB = L @ B
        W = LB @ LB.T
    return 0.5 * (W + W.T)


def sample_inverse_wishart(S, nu: float, rng: np.random.Generator) -> np.ndarray:
    """Inverse-Wishart(S, nu) draw as the inverse of Wishart(S^-1, nu)."""
    S = _check_wishart(S, nu)
    W = sample_wishart(np.linalg.inv(S), nu, rng)
    out = np.linalg.inv(W)
    return 0.5 * (out + out.T)


def niw_posterior(prior: NiwParams, data) -> NiwParams:
    """Conjugate NIW update for i.i.d. Gaussian vectors (rows of ``data``)."""
    X = np.asarray(data, dtype=float)
    D = prior.dim
    if X.size == 0:
        return prior
    X = X.reshape(-1, X.shape[-1]) if X.ndim > 1 else X.reshape(1, -1)
    if X.shape[1] != D:
        raise DimensionError(f"data vectors have dimension {X.shape[1]}, expected {D}")
    n = X.shape[0]
    xbar = X.mean(axis=0)
    kn = prior.kappa0 + n
    C = X - xbar
    d = xbar - prior.m0
    Sn = prior.S0 + C.T @ C + (prior.kappa0 * n / kn) * np.outer(d, d)
    mn = (prior.kappa0 * prior.m0 + n * xbar) / kn
    return NiwParams(mn, kn, prior.nu0 + n, 0.5 * (Sn + Sn.T))


def niw_posterior_sumsq(prior: NiwParams, data) -> NiwParams:
    """Same update via the raw sum-of-squares form of the scale matrix."""
    X = np.atleast_2d(np.asarray(data, dtype=float))
    if X.size == 0:
        return prior
    n = X.shape[0]
    kn = prior.kappa0 + n
    mn = (prior.kappa0 * prior.m0 + X.sum(axis=0)) / kn
    Sn = (prior.S0 + X.T @ X + prior.kappa0 * np.outer(prior.m0, prior.m0)
          - kn * np.outer(mn, mn))
    return NiwParams(mn, kn, prior.nu0 + n, 0.5 * (Sn + Sn.T))


def sample_niw(p: NiwParams, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(mu, Sigma)``: Sigma ~ IW(S, nu), mu ~ N(m, Sigma / kappa)."""
    Sigma = sample_inverse_wishart(p.S0, p.nu0, rng)
    L = np.linalg.cholesky(Sigma / p.kappa0)
    mu = p.m0 + L @ rng.standard_normal(p.dim)
    return mu, Sigma


def sample_mvn_precision(mean_times_prec, prec, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(P^-1 h, P^-1) given ``h = P m`` and precision ``P``."""
    L = np.linalg.cholesky(prec)
    mean = np.linalg.solve(L.T, np.linalg.solve(L, mean_times_prec))
    return mean + np.linalg.solve(L.T, rng.standard_normal(mean.shape))
