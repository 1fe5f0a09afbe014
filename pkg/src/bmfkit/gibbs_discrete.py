"""Gibbs samplers for discrete data.

PAA and PAAA factor count matrices under a Poisson likelihood with Gamma priors
(flat and hierarchical). OGGW factors ordinal ratings through a latent Gaussian
matrix with normal-inverse-Wishart priors on the rows of W and columns of Z.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import FactorState, GibbsConfig, GibbsTrace, MaskedMatrix, run_chain
from .distributions import (
    GammaParams,
    NiwParams,
    norm_cdf,
    rgtn,
    sample_gamma,
    sample_mvn_precision,
    sample_niw,
    niw_posterior,
)
from .errors import DegenerateError, DimensionError, InputError, ParameterError

__all__ = [
    "PoissonHyper",
    "OrdinalSpec",
    "OggwHyper",
    "paa_allocate",
    "paa_allocate_all",
    "paa_w_posterior",
    "paa_sample_w_entry",
    "paaa_lambda_posterior",
    "paaa_sample_lambda_m",
    "ordinal_prob",
    "ordinal_probs",
    "oggw_sample_latents",
    "oggw_expected_category",
    "oggw_score",
    "poisson_score",
    "fit_paa",
    "fit_paaa",
    "fit_oggw",
]

log = logging.getLogger(__name__)

RATE_FLOOR = 1e-300


# -- Poisson models ----------------------------------------------------------------------

@dataclass
class PoissonHyper:
    """Gamma prior settings for PAA / PAAA.

    ``alpha``, ``beta`` are the shape and rate of the factor priors. ``a`` and
    ``b`` parametrize the PAAA rate prior ``lambda ~ Gamma(a, a / b)`` (mean ``b``).
    ``lambda_m_w`` / ``lambda_n_z`` optionally seed the PAAA per-row and
    per-column rates.
    """

    alpha: float = 1.0
    beta: float = 1.0
    a: float = 1.0
    b: float = 1.0
    lambda_m_w: Optional[np.ndarray] = None
    lambda_n_z: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "a", "b"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lambda_m_w", "lambda_n_z"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float)
                if np.any(v <= 0):
                    raise ParameterError(f"{name} must be positive")
                setattr(self, name, v)


def paa_allocate(a_mn: int, w_m: np.ndarray, z_n: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Split the count ``a_mn`` over the K latent sources.

    Returns a multinomial draw with cell probabilities ``w_k z_k / w^T z``.
    """
    a_mn = int(a_mn)
    if a_mn < 0:
        raise InputError(f"counts must be nonnegative, got {a_mn}")
    w_m = np.asarray(w_m, dtype=float)
    z_n = np.asarray(z_n, dtype=float)
    if w_m.shape != z_n.shape or w_m.ndim != 1:
        raise DimensionError(f"w {w_m.shape} and z {z_n.shape} must be equal-length vectors")
    if a_mn == 0:
        return np.zeros(w_m.size, dtype=np.int64)
    r = w_m * z_n
    tot = float(r.sum())
    if not tot > 0:
        raise DegenerateError("zero Poisson rate with a positive count")
    return rng.multinomial(a_mn, r / tot).astype(np.int64)


def paa_allocate_all(counts: np.ndarray, mask: np.ndarray, W: np.ndarray, Z: np.ndarray,
                     rng: np.random.Generator) -> np.ndarray:
    """Allocate every observed count; returns an (M, N, K) integer array.

    Unobserved cells get zero allocations.
    """
    M, N = counts.shape
    K = W.shape[1]
    out = np.zeros((M, N, K), dtype=np.int64)
    idx = np.nonzero(mask & (counts > 0))
    if idx[0].size == 0:
        return out
    r = W[idx[0]] * Z[:, idx[1]].T
    tot = r.sum(axis=1)
    if np.any(~(tot > 0)):
        raise DegenerateError("zero Poisson rate with a positive count")
    p = r / tot[:, None]
    out[idx] = rng.multinomial(counts[idx].astype(np.int64), p)
    return out


def _as_mask(mask, shape) -> np.ndarray:
    if mask is None:
        return np.ones(shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape:
        raise DimensionError(f"mask shape {mask.shape} != {shape}")
    return mask


def paa_w_posterior(m: int, k: int, allocations: np.ndarray, Z: np.ndarray, h: PoissonHyper,
                    mask: Optional[np.ndarray] = None, rate: Optional[float] = None) -> GammaParams:
    """Gamma(alpha + sum_j o_mjk, beta + sum_j z_kj) over observed ``j``.

    ``rate`` replaces ``beta`` (PAAA passes ``lambda_m``).
    """
    allocations = np.asarray(allocations)
    Z = np.asarray(Z, dtype=float)
    mask = _as_mask(mask, allocations.shape[:2])
    obs = mask[m]
    base = h.beta if rate is None else float(rate)
    return GammaParams(h.alpha + float(allocations[m, obs, k].sum()), base + float(Z[k, obs].sum()))


def paa_sample_w_entry(m: int, k: int, allocations: np.ndarray, Z: np.ndarray, h: PoissonHyper,
                       rng: np.random.Generator, mask: Optional[np.ndarray] = None,
                       rate: Optional[float] = None) -> float:
    p = paa_w_posterior(m, k, allocations, Z, h, mask, rate)
    return float(sample_gamma(p.shape, p.rate, rng))


def paaa_lambda_posterior(m: int, W: np.ndarray, h: PoissonHyper) -> GammaParams:
    """Gamma(K alpha + a, a / b + sum_k w_mk)."""
    W = np.asarray(W, dtype=float)
    K = W.shape[1]
    return GammaParams(K * h.alpha + h.a, h.a / h.b + float(W[m].sum()))


def paaa_sample_lambda_m(m: int, W: np.ndarray, h: PoissonHyper, rng: np.random.Generator) -> float:
    p = paaa_lambda_posterior(m, W, h)
    return float(sample_gamma(p.shape, p.rate, rng))


def _count_data(A: MaskedMatrix) -> np.ndarray:
    X = A.filled(0.0)
    obs = X[A.mask]
    if np.any(obs < 0) or np.any(obs != np.round(obs)):
        raise InputError("Poisson models need nonnegative integer counts")
    return np.round(X).astype(np.int64)


def _guard_rates(counts, mask, W, Z, h: PoissonHyper, rng, lam_w=None, lam_z=None) -> None:
    """Redraw factor entries from the prior where a positive count meets a vanishing rate."""
    rates = W @ Z
    bad = mask & (counts > 0) & (rates < RATE_FLOOR)
    if not bad.any():
        return
    rows, cols = np.nonzero(bad)
    log.info("zero-rate guard: redrawing %d rows / %d columns from the prior",
             np.unique(rows).size, np.unique(cols).size)
    K = W.shape[1]
    for m in np.unique(rows):
        rw = h.beta if lam_w is None else lam_w[m]
        W[m] = np.maximum(rng.gamma(h.alpha, 1.0 / rw, size=K), RATE_FLOOR)
    for n in np.unique(cols):
        rz = h.beta if lam_z is None else lam_z[n]
        Z[:, n] = np.maximum(rng.gamma(h.alpha, 1.0 / rz, size=K), RATE_FLOOR)


def _fit_poisson(A: MaskedMatrix, h: PoissonHyper, cfg: GibbsConfig, K: Optional[int],
                 init: Optional[FactorState], hierarchical: bool) -> GibbsTrace:
    counts = _count_data(A)
    mask = A.mask
    maskf = mask.astype(float)
    rng = cfg.rng()
    M, N = A.shape
    if init is None:
        if K is None:
            raise ParameterError("K is required without an initial state")
        W = rng.exponential(1.0, size=(M, K))
        Z = rng.exponential(1.0, size=(K, N))
    else:
        if init.W.shape[0] != M or init.Z.shape[1] != N:
            raise DimensionError("initial state does not conform with the data")
        if np.any(init.W <= 0) or np.any(init.Z <= 0):
            raise InputError("Poisson factors must start strictly positive")
        W, Z = init.W.copy(), init.Z.copy()
    K = W.shape[1]
    lam_w = np.full(M, h.b) if h.lambda_m_w is None else np.broadcast_to(h.lambda_m_w, (M,)).copy()
    lam_z = np.full(N, h.b) if h.lambda_n_z is None else np.broadcast_to(h.lambda_n_z, (N,)).copy()
    box = {"O": np.zeros((M, N, K), dtype=np.int64)}

    def step(t: int) -> None:
        _guard_rates(counts, mask, W, Z, h, rng,
                     lam_w if hierarchical else None, lam_z if hierarchical else None)
        O = paa_allocate_all(counts, mask, W, Z, rng)
        box["O"] = O
        Ow = O.sum(axis=1)  # (M, K)
        Oz = O.sum(axis=0)  # (N, K)
        for k in range(K):
            rate_w = (lam_w if hierarchical else h.beta) + maskf @ Z[k]
            W[:, k] = np.maximum(sample_gamma(h.alpha + Ow[:, k], rate_w, rng), RATE_FLOOR)
            if hierarchical:
                lam_w[:] = sample_gamma(K * h.alpha + h.a, h.a / h.b + W.sum(axis=1), rng)
            rate_z = (lam_z if hierarchical else h.beta) + W[:, k] @ maskf
            Z[k] = np.maximum(sample_gamma(h.alpha + Oz[:, k], rate_z, rng), RATE_FLOOR)
            if hierarchical:
                lam_z[:] = sample_gamma(K * h.alpha + h.a, h.a / h.b + Z.sum(axis=0), rng)

    def loss() -> float:
        r = np.where(mask, counts - W @ Z, 0.0)
        return float(np.sum(r * r)) / A.n_observed

    def snapshot() -> dict:
        snap = {"W": W.copy(), "Z": Z.copy()}
        if hierarchical:
            snap["lambda_w"] = lam_w.copy()
            snap["lambda_z"] = lam_z.copy()
        return snap

    losses, samples = run_chain(cfg, step, snapshot, loss)
    extras = {"allocations": box["O"]}
    if hierarchical:
        extras.update(lambda_w=lam_w.copy(), lambda_z=lam_z.copy())
    return GibbsTrace(losses, samples, cfg, FactorState(W, Z, 1.0), extras)


def fit_paa(A: MaskedMatrix, h: Optional[PoissonHyper] = None, cfg: Optional[GibbsConfig] = None,
            K: Optional[int] = None, init: Optional[FactorState] = None) -> GibbsTrace:
    """Poisson factorization with Gamma priors.

    Each iteration allocates every observed count over the K sources, then for
    each ``k`` draws column ``k`` of W followed by row ``k`` of Z. Unobserved
    cells take part in no sum. ``losses`` is the masked MSE between counts and
    ``W Z``; ``extras["allocations"]`` holds the last allocation array.
    """
    return _fit_poisson(A, PoissonHyper() if h is None else h,
                        GibbsConfig() if cfg is None else cfg, K, init, hierarchical=False)


def fit_paaa(A: MaskedMatrix, h: Optional[PoissonHyper] = None, cfg: Optional[GibbsConfig] = None,
             K: Optional[int] = None, init: Optional[FactorState] = None) -> GibbsTrace:
    """Poisson factorization with hierarchical Gamma rates per row of W and column of Z.

    As :func:`fit_paa`, with the row rates redrawn after each column of W and
    the column rates after each row of Z.
    """
    return _fit_poisson(A, PoissonHyper() if h is None else h,
                        GibbsConfig() if cfg is None else cfg, K, init, hierarchical=True)


def poisson_score(trace: GibbsTrace) -> np.ndarray:
    """Posterior mean over posterior std of ``W Z`` across retained samples."""
    R = np.array([s["W"] @ s["Z"] for s in trace.samples])
    return _sharpe(R)


def _sharpe(R: np.ndarray) -> np.ndarray:
    if R.shape[0] < 2:
        raise ParameterError("need at least two retained samples for a score")
    sd = R.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return R.mean(axis=0) / sd


# -- ordinal model -----------------------------------------------------------------------

@dataclass
class OrdinalSpec:
    """Category boundaries ``b_1 < ... < b_{A+1}`` with ``b_1 = -inf``, ``b_{A+1} = inf``.

    Categories are ``1..A``. The default boundaries are ``(-inf, 1.5, ..., A - 0.5, inf)``.
    """

    A: int
    boundaries: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if int(self.A) < 2:
            raise ParameterError("need at least two categories")
        self.A = int(self.A)
        if self.boundaries is None:
            inner = np.arange(1, self.A) + 0.5
            self.boundaries = np.concatenate([[-np.inf], inner, [np.inf]])
        b = np.asarray(self.boundaries, dtype=float)
        if b.shape != (self.A + 1,):
            raise DimensionError(f"need {self.A + 1} boundaries, got {b.shape}")
        if b[0] != -np.inf or b[-1] != np.inf:
            raise ParameterError("outer boundaries must be -inf and +inf")
        if np.any(np.diff(b) <= 0):
            raise ParameterError("boundaries must be strictly increasing")
        self.boundaries = b

    def interval(self, a) -> tuple[np.ndarray, np.ndarray]:
        a = np.asarray(a, dtype=np.int64)
        if np.any(a < 1) or np.any(a > self.A):
            raise InputError(f"categories must lie in 1..{self.A}")
        return self.boundaries[a - 1], self.boundaries[a]

    def categorize(self, x) -> np.ndarray:
        """Category whose interval contains ``x``."""
        return np.searchsorted(self.boundaries[1:-1], np.asarray(x, dtype=float), side="right") + 1


def ordinal_prob(a: int, h: float, spec: OrdinalSpec) -> float:
    """Phi(h - b_a) - Phi(h - b_{a+1})."""
    lo, hi = spec.interval(a)
    return float(norm_cdf(h - lo) - norm_cdf(h - hi))


def ordinal_probs(h, spec: OrdinalSpec) -> np.ndarray:
    """All category probabilities; the last axis runs over categories."""
    h = np.asarray(h, dtype=float)
    c = norm_cdf(h[..., None] - spec.boundaries)
    return c[..., :-1] - c[..., 1:]


def oggw_sample_latents(a_mn, mean, tau: float, spec: OrdinalSpec,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``(f, h)`` given the category, ``mean = w^T z`` and noise precision ``tau``.

    ``f ~ GTN(mean, variance 1 + 1/tau, b_a, b_{a+1})`` then
    ``h ~ N((f + mean tau) / (1 + tau), 1 / (1 + tau))``. Vectorized over entries.
    """
    if not tau > 0:
        raise ParameterError("tau must be positive")
    lo, hi = spec.interval(a_mn)
    mean = np.asarray(mean, dtype=float)
    f = rgtn(mean, 1.0 / (1.0 + 1.0 / tau), lo, hi, rng)
    hv = (f + mean * tau) / (1.0 + tau) + rng.standard_normal(np.shape(f)) / np.sqrt(1.0 + tau)
    if np.ndim(a_mn) == 0 and np.ndim(mean) == 0:
        return float(f), float(hv)
    return f, hv


def oggw_expected_category(w_m, z_n, tau: float, spec: OrdinalSpec):
    """Expected category with ``h`` integrated out: sum_a Phi((w^T z - b_a) / sqrt(1 + 1/tau)).

    ``w_m`` / ``z_n`` may also be ``W`` (M x K) and ``Z`` (K x N), giving a matrix.
    """
    mean = np.asarray(w_m, dtype=float) @ np.asarray(z_n, dtype=float)
    s = np.sqrt(1.0 + 1.0 / tau)
    return np.sum(norm_cdf((np.asarray(mean)[..., None] - spec.boundaries[:-1]) / s), axis=-1)


def oggw_score(trace: GibbsTrace, spec: OrdinalSpec, m: Optional[int] = None,
               n: Optional[int] = None):
    """Posterior mean over posterior std of the expected category across retained samples.

    Returns the full matrix unless ``m`` and ``n`` are given.
    """
    Y = np.array([oggw_expected_category(s["W"], s["Z"], s["tau"], spec) for s in trace.samples])
    score = _sharpe(Y)
    if m is not None and n is not None:
        return float(score[m, n])
    return score


@dataclass
class OggwHyper:
    """NIW prior shared by rows of W and columns of Z, Gamma prior on the latent precision."""

    niw: Optional[NiwParams] = None
    alpha_tau: float = 1.0
    beta_tau: float = 1.0

    def __post_init__(self) -> None:
        if not (self.alpha_tau > 0 and self.beta_tau > 0):
            raise ParameterError("alpha_tau and beta_tau must be positive")

    def niw_for(self, K: int) -> NiwParams:
        if self.niw is None:
            return NiwParams.default(K)
        if self.niw.dim != K:
            raise DimensionError(f"NIW dimension {self.niw.dim} != K={K}")
        return self.niw


def fit_oggw(A: MaskedMatrix, spec: OrdinalSpec, h: Optional[OggwHyper] = None,
             cfg: Optional[GibbsConfig] = None, K: Optional[int] = None,
             init: Optional[FactorState] = None) -> GibbsTrace:
    """Ordinal factorization through latent Gaussians.

    Iteration order: each row of W (Gaussian posterior given the latents of that
    row) followed by that row's latents; each column of Z followed by that
    column's latents; the latent precision ``tau``; NIW hyperparameters of W, then
    of Z. Latents exist for observed cells only.

    ``losses`` is the masked MSE between categories and the expected category.
    Samples carry ``W``, ``Z``, ``tau`` and ``H`` (NaN where unobserved).
    """
    h = OggwHyper() if h is None else h
    cfg = GibbsConfig() if cfg is None else cfg
    rng = cfg.rng()
    M, N = A.shape
    cats = np.where(A.mask, A.filled(1.0), 1.0)
    if np.any(cats != np.round(cats)):
        raise InputError("ordinal data must be integer categories")
    cats = cats.astype(np.int64)
    spec.interval(cats[A.mask])
    mask = A.mask
    if init is None:
        if K is None:
            raise ParameterError("K is required without an initial state")
        W = rng.standard_normal((M, K))
        Z = rng.standard_normal((K, N))
        tau = 1.0
    else:
        if init.W.shape[0] != M or init.Z.shape[1] != N:
            raise DimensionError("initial state does not conform with the data")
        W, Z, tau = init.W.copy(), init.Z.copy(), 1.0 / init.sigma2
    K = W.shape[1]
    niw = h.niw_for(K)
    lo_all = np.where(mask, spec.boundaries[cats - 1], -np.inf)
    hi_all = np.where(mask, spec.boundaries[cats], np.inf)
    H = np.where(mask, W @ Z, 0.0)
    hyper = {"mu_w": np.zeros(K), "Sigma_w": np.eye(K), "mu_z": np.zeros(K), "Sigma_z": np.eye(K)}
    box = {"tau": tau}

    def latents(mean, lo, hi, t):
        f = rgtn(mean, 1.0 / (1.0 + 1.0 / t), lo, hi, rng)
        return (f + mean * t) / (1.0 + t) + rng.standard_normal(np.shape(f)) / np.sqrt(1.0 + t)

    def step(it: int) -> None:
        t = box["tau"]
        Pw = np.linalg.inv(hyper["Sigma_w"])
        hw = Pw @ hyper["mu_w"]
        for m in range(M):
            obs = mask[m]
            Zo = Z[:, obs]
            W[m] = sample_mvn_precision(hw + t * Zo @ H[m, obs], Pw + t * Zo @ Zo.T, rng)
            if obs.any():
                H[m, obs] = latents(W[m] @ Zo, lo_all[m, obs], hi_all[m, obs], t)
        Pz = np.linalg.inv(hyper["Sigma_z"])
        hz = Pz @ hyper["mu_z"]
        for n in range(N):
            obs = mask[:, n]
            Wo = W[obs]
            Z[:, n] = sample_mvn_precision(hz + t * Wo.T @ H[obs, n], Pz + t * Wo.T @ Wo, rng)
            if obs.any():
                H[obs, n] = latents(Wo @ Z[:, n], lo_all[obs, n], hi_all[obs, n], t)
        r = np.where(mask, H - W @ Z, 0.0)
        box["tau"] = float(sample_gamma(h.alpha_tau + 0.5 * A.n_observed,
                                        h.beta_tau + 0.5 * float(np.sum(r * r)), rng))
        hyper["mu_w"], hyper["Sigma_w"] = sample_niw(niw_posterior(niw, W), rng)
        hyper["mu_z"], hyper["Sigma_z"] = sample_niw(niw_posterior(niw, Z.T), rng)

    def loss() -> float:
        y = oggw_expected_category(W, Z, box["tau"], spec)
        r = np.where(mask, cats - y, 0.0)
        return float(np.sum(r * r)) / A.n_observed

    def snapshot() -> dict:
        return {"W": W.copy(), "Z": Z.copy(), "tau": box["tau"], "H": np.where(mask, H, np.nan)}

    losses, samples = run_chain(cfg, step, snapshot, loss)
    extras = dict(hyper)
    extras["tau"] = box["tau"]
    return GibbsTrace(losses, samples, cfg, FactorState(W, Z, 1.0 / box["tau"]), extras)
