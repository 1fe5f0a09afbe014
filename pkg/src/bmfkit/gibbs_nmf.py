"""Gibbs samplers for nonnegative and semi-nonnegative Bayesian matrix factorization.

Every nonnegative conditional is a truncated normal on [0, inf). Internally each
entry is described by natural parameters ``prec`` and ``lin`` of the unnormalized
log density ``-prec/2 w^2 + lin w``, so that parent mean is ``lin/prec`` and parent
variance ``1/prec``.

Models
------
GEE, GEEA (ARD rates), GTT, GTTN (hierarchical TN), GRR, GRRN (hierarchical RN),
GL12, GL22, GLinf, GL2inf2 (norm regularizers), GEG and GnVG (nonnegative W,
real Z) and GEEE (tri-factorization W F Z).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from .core import FactorState, GibbsConfig, GibbsTrace, MaskedMatrix, ResidualState, run_chain
from .distributions import GammaParams, rn_to_gtn, RnParams, rtn, sample_gamma, sample_invgamma
from .errors import DegenerateError, DimensionError, ParameterError
from .gibbs_rmf import _gvg_column_terms, _w_entry_stats

log = logging.getLogger(__name__)

ArrayOrScalar = Union[float, np.ndarray]

NMF_MODELS = ("GEE", "GEEA", "GTT", "GTTN", "GRR", "GRRN", "GL12", "GL22", "GLinf",
              "GL2inf2", "GEG", "GnVG", "GEEE")
GL_VARIANTS = ("L12", "L22", "Linf", "L2inf2")


@dataclass
class NmfHyper:
    """Prior settings for the nonnegative samplers.

    Per-entry quantities accept scalars or arrays broadcastable to the factor
    shape (``M x K`` for W, ``K x N`` for Z, ``K x L`` for F).

    Attributes
    ----------
    lambda_w, lambda_z : exponential rates (GEE, GEEE, GEG for W).
    tn_mu_w, tn_tau_w, tn_mu_z, tn_tau_z : TN prior parent mean/precision (GTT).
    rn_lambda_w, rn_lambda_z : RN rates (GRR, combined with the TN parameters).
    mu_mu, tau_mu, a, b : hyperprior of the parent mean and precision (GTTN, GRRN).
    alpha_lambda, beta_lambda : Gamma prior of RN rates (GRRN); ``beta_lambda=None``
        means ``sqrt(m0 / K)`` with ``m0`` the mean of the observed entries.
    ard_alpha, ard_beta : Gamma prior of shared rates (GEEA).
    norm_lambda : scalar or K-vector of regularization weights (GL family).
    lambda_f : exponential rates of F (GEEE).
    gauss_lambda_z : Gaussian prior precision of the real-valued Z (GEG, GnVG).
    gamma_vol : volume prior weight (GnVG).
    """

    lambda_w: ArrayOrScalar = 0.1
    lambda_z: ArrayOrScalar = 0.1
    tn_mu_w: ArrayOrScalar = 0.0
    tn_tau_w: ArrayOrScalar = 0.1
    tn_mu_z: ArrayOrScalar = 0.0
    tn_tau_z: ArrayOrScalar = 0.1
    rn_lambda_w: ArrayOrScalar = 0.1
    rn_lambda_z: ArrayOrScalar = 0.1
    mu_mu: float = 0.0
    tau_mu: float = 0.1
    a: float = 1.0
    b: float = 1.0
    alpha_lambda: float = 1.0
    beta_lambda: Optional[float] = None
    ard_alpha: float = 1.0
    ard_beta: float = 1.0
    norm_lambda: ArrayOrScalar = 0.1
    lambda_f: ArrayOrScalar = 0.1
    gauss_lambda_z: ArrayOrScalar = 0.1
    gamma_vol: float = 1.0
    alpha_sigma: float = 1.0
    beta_sigma: float = 1.0

    def __post_init__(self) -> None:
        for name in ("tau_mu", "a", "b", "alpha_lambda", "ard_alpha", "ard_beta",
                     "alpha_sigma", "beta_sigma"):
            if not (getattr(self, name) > 0):
                raise ParameterError(f"{name} must be positive")
        for name in ("lambda_w", "lambda_z", "tn_tau_w", "tn_tau_z", "rn_lambda_w",
                     "rn_lambda_z", "norm_lambda", "lambda_f", "gauss_lambda_z"):
            if np.any(np.asarray(getattr(self, name), dtype=float) < 0):
                raise ParameterError(f"{name} must be nonnegative")
        if self.beta_lambda is not None and not (self.beta_lambda > 0):
            raise ParameterError("beta_lambda must be positive")
        if self.gamma_vol < 0:
            raise ParameterError("gamma_vol must be nonnegative")

    def resolved_beta_lambda(self, A: MaskedMatrix, K: int) -> float:
        if self.beta_lambda is not None:
            return float(self.beta_lambda)
        m0 = A.observed_mean()
        if not (m0 > 0):
            raise ParameterError("default beta_lambda needs a positive observed mean")
        return float(np.sqrt(m0 / K))


def _full(x: ArrayOrScalar, shape) -> np.ndarray:
    return np.array(np.broadcast_to(np.asarray(x, dtype=float), shape))


def _norm_lambda(h: NmfHyper, K: int) -> np.ndarray:
    lam = np.asarray(h.norm_lambda, dtype=float)
    return np.full(K, float(lam)) if lam.ndim == 0 else _full(lam, (K,))


# -- truncated normal from natural parameters ---------------------------------------------

def _draw_tn(prec: np.ndarray, lin: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw from the density proportional to exp(-prec/2 w^2 + lin w) on w >= 0.

    Zero precision with a negative linear coefficient is an exponential density;
    any other non-positive precision is improper.
    """
    prec = np.asarray(prec, dtype=float)
    lin = np.asarray(lin, dtype=float)
    out = np.empty(np.broadcast(prec, lin).shape)
    prec, lin = np.broadcast_arrays(prec, lin)
    ok = prec > 0
    if np.any(~ok):
        expo = ~ok & (prec == 0) & (lin < 0)
        if np.any(~ok & ~expo):
            raise DegenerateError("improper truncated-normal conditional (zero precision)")
        out[expo] = rng.exponential(1.0 / -lin[expo])
    if np.any(ok):
        out[ok] = rtn(lin[ok] / prec[ok], prec[ok], rng)
    return out


def _draw_normal(prec: np.ndarray, lin: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    if np.any(~(prec > 0)):
        raise DegenerateError("zero posterior precision")
    return lin / prec + rng.standard_normal(np.shape(prec)) / np.sqrt(prec)


def _params(prec: float, lin: float, label: str) -> tuple[float, float]:
    if not (prec > 0):
        raise DegenerateError(f"zero posterior precision for {label}")
    return lin / prec, 1.0 / prec


# -- entry-level conditionals --------------------------------------------------------------

def _check(A: MaskedMatrix, S: FactorState) -> None:
    right = S.Z.shape[1]
    if S.W.shape[0] != A.M or right != A.N:
        raise DimensionError(f"factors {S.W.shape}, {S.Z.shape} do not match data {A.shape}")


def _entry(x: ArrayOrScalar, m: int, k: int, shape) -> float:
    return float(np.broadcast_to(np.asarray(x, dtype=float), shape)[m, k])


def gee_w_posterior(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper) -> tuple[float, float]:
    """Parent mean and variance of the GEE conditional of ``w_mk``.

    ``var = sigma^2 / sum z_kj^2`` and ``mean = var (-lambda + sum z_kj r_j / sigma^2)``.
    """
    _check(A, S)
    sz, lz = _w_entry_stats(m, k, A, S)
    lam = _entry(h.lambda_w, m, k, S.W.shape)
    return _params(sz / S.sigma2, lz / S.sigma2 - lam, f"w[{m},{k}]")


def gee_sample_w_entry(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper,
                       rng: np.random.Generator) -> float:
    """Draw ``w_mk`` from its GEE conditional.

    With no observed entry in row ``m`` the conditional is the exponential prior.
    """
    _check(A, S)
    sz, lz = _w_entry_stats(m, k, A, S)
    lam = _entry(h.lambda_w, m, k, S.W.shape)
    return float(_draw_tn(np.array(sz / S.sigma2), np.array(lz / S.sigma2 - lam), rng))


def geea_lambda_posterior(k: int, S: FactorState, h: NmfHyper) -> GammaParams:
    """Gamma(M + N + alpha, beta + sum_m w_mk + sum_n z_kn)."""
    M, N = S.W.shape[0], S.Z.shape[1]
    return GammaParams(M + N + h.ard_alpha, h.ard_beta + float(S.W[:, k].sum() + S.Z[k].sum()))


def geea_sample_lambda_k(k: int, S: FactorState, h: NmfHyper, rng: np.random.Generator) -> float:
    g = geea_lambda_posterior(k, S, h)
    return float(sample_gamma(g.shape, g.rate, rng))


def gtt_w_posterior(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper,
                    mu: Optional[float] = None, tau: Optional[float] = None) -> tuple[float, float]:
    """Parent mean and variance of the GTT conditional of ``w_mk``.

    ``var = sigma^2 / (sum z_kj^2 + tau sigma^2)``,
    ``mean = var (sum z_kj r_j / sigma^2 + tau mu)``.
    """
    _check(A, S)
    mu = _entry(h.tn_mu_w, m, k, S.W.shape) if mu is None else mu
    tau = _entry(h.tn_tau_w, m, k, S.W.shape) if tau is None else tau
    sz, lz = _w_entry_stats(m, k, A, S)
    return _params(sz / S.sigma2 + tau, lz / S.sigma2 + tau * mu, f"w[{m},{k}]")


def gtt_sample_w_entry(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper,
                       rng: np.random.Generator, mu=None, tau=None) -> float:
    mean, var = gtt_w_posterior(m, k, A, S, h, mu, tau)
    return float(rtn(mean, 1.0 / var, rng))


def grr_w_posterior(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper,
                    mu: Optional[float] = None, tau: Optional[float] = None,
                    lam: Optional[float] = None) -> tuple[float, float]:
    """GRR conditional of ``w_mk``: the GTT conditional at the RN-equivalent TN prior."""
    mu = _entry(h.tn_mu_w, m, k, S.W.shape) if mu is None else mu
    tau = _entry(h.tn_tau_w, m, k, S.W.shape) if tau is None else tau
    lam = _entry(h.rn_lambda_w, m, k, S.W.shape) if lam is None else lam
    g = rn_to_gtn(RnParams(mu, tau, lam))
    return gtt_w_posterior(m, k, A, S, h, g.mu, g.tau)


def gttn_hyper_posterior(w: float, mu: float, tau: float, h: NmfHyper):
    """Conditionals of the TN parent mean and precision of one entry.

    Returns ``((mean, var) of mu, GammaParams of tau)``; the tau conditional is
    evaluated at the supplied ``mu``.
    """
    prec = tau + h.tau_mu
    mu_post = ((tau * w + h.tau_mu * h.mu_mu) / prec, 1.0 / prec)
    tau_post = GammaParams(h.a, h.b + 0.5 * (w - mu) ** 2)
    return mu_post, tau_post


def gttn_update_hyper(w, mu, tau, h: NmfHyper, rng: np.random.Generator):
    """Draw ``mu`` then ``tau`` (given the new ``mu``) for GTTN; vectorized."""
    w, mu, tau = (np.asarray(v, dtype=float) for v in (w, mu, tau))
    prec = tau + h.tau_mu
    mu_new = (tau * w + h.tau_mu * h.mu_mu) / prec + rng.standard_normal(np.shape(prec)) / np.sqrt(prec)
    tau_new = sample_gamma(h.a, h.b + 0.5 * (w - mu_new) ** 2, rng)
    return mu_new, tau_new


def grrn_w_posterior(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper,
                     mu: float, tau: float, lam: float) -> tuple[float, float]:
    """Parent mean and variance of ``w_mk`` under an RN(mu, 1/tau, lam) prior."""
    _check(A, S)
    sz, lz = _w_entry_stats(m, k, A, S)
    return _params(sz / S.sigma2 + tau, lz / S.sigma2 + tau * mu - lam, f"w[{m},{k}]")


def grrn_hyper_posterior(w: float, mu: float, tau: float, h: NmfHyper, beta_lambda: float):
    """Conditionals of (mu, tau, lambda) for one GRRN entry.

    ``mu ~ N((tau w + tau_mu mu_mu)/(tau + tau_mu), 1/(tau + tau_mu))``,
    ``tau ~ Gamma(a + 1/2, b + (w - mu)^2 / 2)``,
    ``lambda ~ Gamma(alpha_lambda + 1, beta_lambda + w)``.
    """
    prec = tau + h.tau_mu
    return (((tau * w + h.tau_mu * h.mu_mu) / prec, 1.0 / prec),
            GammaParams(h.a + 0.5, h.b + 0.5 * (w - mu) ** 2),
            GammaParams(h.alpha_lambda + 1.0, beta_lambda + w))


def _grrn_update_hyper(w, tau, h: NmfHyper, beta_lambda: float, rng):
    prec = tau + h.tau_mu
    mu_new = (tau * w + h.tau_mu * h.mu_mu) / prec + rng.standard_normal(np.shape(prec)) / np.sqrt(prec)
    tau_new = sample_gamma(h.a + 0.5, h.b + 0.5 * (w - mu_new) ** 2, rng)
    lam_new = sample_gamma(h.alpha_lambda + 1.0, beta_lambda + w, rng)
    return mu_new, tau_new, lam_new


def grrn_sample(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper,
                mu: float, tau: float, lam: float, rng: np.random.Generator,
                beta_lambda: Optional[float] = None):
    """One GRRN entry step: ``w``, then ``mu``, ``tau``, ``lambda``.

    Returns ``(w, mu, tau, lambda)``.
    """
    bl = h.resolved_beta_lambda(A, S.K) if beta_lambda is None else beta_lambda
    mean, var = grrn_w_posterior(m, k, A, S, h, mu, tau, lam)
    w = float(rtn(mean, 1.0 / var, rng))
    mu_new, tau_new, lam_new = _grrn_update_hyper(w, tau, h, bl, rng)
    return w, float(mu_new), float(tau_new), float(lam_new)


def _row_max_indicator(F: np.ndarray, k: int) -> np.ndarray:
    """1 where column ``k`` holds the row maximum (lowest index wins ties)."""
    return (np.argmax(F, axis=1) == k).astype(float)


def _gl_terms(variant: str, F: np.ndarray, k: int, lam_k: float) -> tuple[np.ndarray, np.ndarray]:
    """Extra (precision, linear) terms of column ``k`` of ``F`` for a GL variant."""
    rows = F.shape[0]
    if variant == "L12":
        others = F.sum(axis=1) - F[:, k]
        return np.full(rows, lam_k), -lam_k * others
    if variant == "L22":
        return np.full(rows, lam_k), np.zeros(rows)
    if variant == "Linf":
        return np.zeros(rows), -lam_k * _row_max_indicator(F, k)
    if variant == "L2inf2":
        return np.full(rows, lam_k), -lam_k * _row_max_indicator(F, k)
    raise ParameterError(f"unknown GL variant {variant!r}")


def gl_w_posterior(variant: str, m: int, k: int, A: MaskedMatrix, S: FactorState,
                   h: NmfHyper) -> tuple[float, float]:
    """Parent mean and variance of ``w_mk`` for a norm-regularized model.

    The row-maximum indicator of the infinity variants is evaluated on the
    current row, including the current value of ``w_mk``.
    """
    _check(A, S)
    lam_k = float(_norm_lambda(h, S.K)[k])
    ep, el = _gl_terms(variant, S.W[m:m + 1], k, lam_k)
    sz, lz = _w_entry_stats(m, k, A, S)
    return _params(sz / S.sigma2 + ep[0], lz / S.sigma2 + el[0], f"w[{m},{k}]")


def gl_sample_w_entry(variant: str, m: int, k: int, A: MaskedMatrix, S: FactorState,
                      h: NmfHyper, rng: np.random.Generator) -> float:
    _check(A, S)
    lam_k = float(_norm_lambda(h, S.K)[k])
    ep, el = _gl_terms(variant, S.W[m:m + 1], k, lam_k)
    sz, lz = _w_entry_stats(m, k, A, S)
    return float(_draw_tn(np.array(sz / S.sigma2 + ep[0]), np.array(lz / S.sigma2 + el[0]), rng))


def geee_cross_term(k: int, l: int, S: FactorState) -> np.ndarray:
    """``C_ij = sum over (s,t) != (k,l) of w_is f_st z_tj``, computed by exclusion."""
    return S.W @ S.F @ S.Z - S.F[k, l] * np.outer(S.W[:, k], S.Z[l])


def geee_cross_term_direct(k: int, l: int, S: FactorState) -> np.ndarray:
    """Same quantity as :func:`geee_cross_term` via an explicit masked sum."""
    F = S.F.copy()
    F[k, l] = 0.0
    return S.W @ F @ S.Z


def geee_f_posterior(k: int, l: int, A: MaskedMatrix, S: FactorState, h: NmfHyper) -> tuple[float, float]:
    """Parent mean and variance of the GEEE conditional of ``f_kl`` (observed cells only)."""
    if S.F is None:
        raise ParameterError("state has no middle factor")
    _check(A, S)
    B = np.outer(S.W[:, k], S.Z[l])
    mask = A.mask
    C = geee_cross_term(k, l, S)
    s = float(np.sum(B[mask] ** 2))
    lin = float(np.sum(B[mask] * (A.values[mask] - C[mask]))) / S.sigma2
    lam = _entry(h.lambda_f, k, l, S.F.shape)
    return _params(s / S.sigma2, lin - lam, f"f[{k},{l}]")


def geee_sample_f_entry(k: int, l: int, A: MaskedMatrix, S: FactorState, h: NmfHyper,
                        rng: np.random.Generator) -> float:
    mean, var = geee_f_posterior(k, l, A, S, h)
    return float(rtn(mean, 1.0 / var, rng))


def gnvg_w_posterior(m: int, k: int, A: MaskedMatrix, S: FactorState, h: NmfHyper) -> tuple[float, float]:
    """Parent parameters of the nonnegative volume-prior conditional (GVG, truncated at 0)."""
    from .gibbs_rmf import RmfHyper, gvg_w_posterior
    return gvg_w_posterior(m, k, A, S, RmfHyper(gamma_vol=h.gamma_vol))


# -- chain -------------------------------------------------------------------------------------

Model = Literal["GEE", "GEEA", "GTT", "GTTN", "GRR", "GRRN", "GL12", "GL22", "GLinf",
                "GL2inf2", "GEG", "GnVG", "GEEE"]


class _Side:
    """Per-factor prior state; ``F`` is W (M x K) or Z transposed (N x K)."""

    def __init__(self, name: str, F: np.ndarray, model: str, h: NmfHyper,
                 beta_lambda: Optional[float]):
        self.name = name
        self.F = F
        shape = F.shape
        w = name == "w"
        self.exp_rate = _tfull(h.lambda_w if w else h.lambda_z, shape, w)
        self.mu = _tfull(h.tn_mu_w if w else h.tn_mu_z, shape, w)
        self.tau = _tfull(h.tn_tau_w if w else h.tn_tau_z, shape, w)
        self.rn = _tfull(h.rn_lambda_w if w else h.rn_lambda_z, shape, w)
        self.gauss = _tfull(h.gauss_lambda_z, shape, False)
        if model == "GRRN":
            self.rn = np.full(shape, h.alpha_lambda / beta_lambda)


def _tfull(x: ArrayOrScalar, shape, as_is: bool) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 2 and not as_is:
        arr = arr.T
    return _full(arr, shape)


def fit_nmf(
    model: Model,
    A: MaskedMatrix,
    h: Optional[NmfHyper] = None,
    cfg: Optional[GibbsConfig] = None,
    K: Optional[int] = None,
    init: Optional[FactorState] = None,
    L: Optional[int] = None,
) -> GibbsTrace:
    """Run a nonnegative Gibbs chain.

    Sweep order per iteration: for each ``k``, column ``k`` of W then row ``k``
    of Z (with per-entry hyperparameters of GTTN/GRRN refreshed right after
    their entries, and the GEEA rate ``lambda_k`` after both); then sigma^2.
    GEEE instead refreshes, for each ``k``, column ``k`` of W then row ``k`` of
    F, then all rows of Z, then sigma^2.

    Parameters
    ----------
    model : str
        One of ``NMF_MODELS``.
    A : MaskedMatrix
    h : NmfHyper, optional
    cfg : GibbsConfig, optional
    K : int, optional
        Rank; required unless ``init`` is given.
    init : FactorState, optional
    L : int, optional
        Inner dimension of Z for GEEE (defaults to ``K``).

    Returns
    -------
    GibbsTrace
        Samples carry ``W``, ``Z``, ``sigma2`` and ``F`` for GEEE.
    """
    if model not in NMF_MODELS:
        raise ParameterError(f"unknown nonnegative model {model!r}")
    h = NmfHyper() if h is None else h
    cfg = GibbsConfig() if cfg is None else cfg
    rng = cfg.rng()
    semi = model in ("GEG", "GnVG")
    if init is None:
        if K is None:
            raise ParameterError("K is required without an initial state")
        L = K if L is None else L
        W = rng.exponential(1.0, (A.M, K))
        if model == "GEEE":
            F = np.eye(K, L) + 0.1 * rng.random((K, L))
            Z = rng.exponential(1.0, (L, A.N))
        else:
            F = None
            Z = rng.standard_normal((K, A.N)) if semi else rng.exponential(1.0, (K, A.N))
        state = FactorState(W, Z, 1.0, F)
    else:
        state = init.copy()
        _check(A, state)
        if model == "GEEE" and state.F is None:
            raise ParameterError("GEEE needs an initial state with F")
    K = state.K
    if model == "GnVG" and K < 2:
        raise ParameterError("GnVG needs K >= 2")
    W, Z, F = state.W, state.Z, state.F
    box = {"sigma2": state.sigma2}
    beta_lambda = h.resolved_beta_lambda(A, K) if model == "GRRN" else None
    lam_k = np.full(K, h.ard_alpha / h.ard_beta)
    nl = _norm_lambda(h, K)

    if model == "GEEE":
        step = _geee_step(A, W, F, Z, h, box, rng)
        R = None
    else:
        R = ResidualState(A, W, Z)
        sides = {"w": _Side("w", W, model, h, beta_lambda),
                 "z": _Side("z", Z.T, model, h, beta_lambda)}
        zero_rows = {"w": ~A.mask.any(axis=1), "z": ~A.mask.any(axis=0)}
        if model in ("GEE", "GEEA", "GEG"):
            for nm in ("w", "z"):
                if np.any(zero_rows[nm]) and not (semi and nm == "z"):
                    log.info("%s: %d %s-entries have no observations; drawing them from the prior",
                             model, int(zero_rows[nm].sum()), nm)

        def update(side: _Side, k: int, s2: float) -> None:
            S, Lv = R.w_stats(k) if side.name == "w" else R.z_stats(k)
            prec = S / s2
            lin = Lv / s2
            if semi and side.name == "z":
                g = side.gauss[:, k]
                new = _draw_normal(prec + g, lin, rng)
            elif model in ("GEE", "GEG"):
                new = _draw_tn(prec, lin - side.exp_rate[:, k], rng)
            elif model == "GEEA":
                new = _draw_tn(prec, lin - lam_k[k], rng)
            elif model in ("GTT", "GTTN"):
                new = _draw_tn(prec + side.tau[:, k], lin + side.tau[:, k] * side.mu[:, k], rng)
            elif model == "GRR":
                g_mu = (side.tau[:, k] * side.mu[:, k] - side.rn[:, k]) / side.tau[:, k]
                new = _draw_tn(prec + side.tau[:, k], lin + side.tau[:, k] * g_mu, rng)
            elif model == "GRRN":
                new = _draw_tn(prec + side.tau[:, k],
                               lin + side.tau[:, k] * side.mu[:, k] - side.rn[:, k], rng)
            else:
                ep, el = _gl_terms("L" + model[2:], side.F, k, float(nl[k]))
                new = _draw_tn(prec + ep, lin + el, rng)
            if side.name == "w":
                R.set_w_col(k, new)
            else:
                R.set_z_row(k, new)
            if model == "GTTN":
                side.mu[:, k], side.tau[:, k] = gttn_update_hyper(new, side.mu[:, k], side.tau[:, k], h, rng)
            elif model == "GRRN":
                side.mu[:, k], side.tau[:, k], side.rn[:, k] = _grrn_update_hyper(
                    new, side.tau[:, k], h, beta_lambda, rng)

        def step(t: int) -> None:
            R.refresh()
            s2 = box["sigma2"]
            if model == "GnVG":
                _gnvg_w_sweep(R, h, s2, rng)
                for k in range(K):
                    update(sides["z"], k, s2)
            else:
                for k in range(K):
                    update(sides["w"], k, s2)
                    update(sides["z"], k, s2)
                    if model == "GEEA":
                        lam_k[k] = sample_gamma(A.M + A.N + h.ard_alpha,
                                                h.ard_beta + W[:, k].sum() + Z[k].sum(), rng)
            R.refresh()
            box["sigma2"] = float(sample_invgamma(h.alpha_sigma + 0.5 * R.n_obs,
                                                  h.beta_sigma + 0.5 * R.sse(), rng))

    def loss() -> float:
        if R is not None:
            return R.mse()
        resid = np.where(A.mask, A.values - W @ F @ Z, 0.0)
        return float(np.sum(resid ** 2)) / A.n_observed

    def snapshot() -> dict:
        snap = {"W": W.copy(), "Z": Z.copy(), "sigma2": box["sigma2"]}
        if F is not None:
            snap["F"] = F.copy()
        if model == "GEEA":
            snap["lambda"] = lam_k.copy()
        return snap

    losses, samples = run_chain(cfg, step, snapshot, loss)
    final = FactorState(W, Z, box["sigma2"], None if F is None else F)
    extras = {}
    if model == "GEEA":
        extras["lambda"] = lam_k.copy()
    if model == "GRRN":
        extras["beta_lambda"] = beta_lambda
    return GibbsTrace(losses, samples, cfg, final, extras)


def _gnvg_w_sweep(R: ResidualState, h: NmfHyper, s2: float, rng) -> None:
    M, K = R.W.shape
    for k in range(K):
        Rk, D, adj = _gvg_column_terms(R.W, k)
        S, _ = R.w_stats(k)
        t = Rk.T @ R.W[:, k]
        z = R.Z[k]
        for m in range(M):
            r = Rk[m]
            w_old = R.W[m, k]
            s = t - w_old * r
            prec = S[m] / s2 + h.gamma_vol * (D - r @ adj @ r)
            lin = h.gamma_vol * (r @ adj @ s) + (R.E[m] @ z + w_old * S[m]) / s2
            w_new = float(_draw_tn(np.array(prec), np.array(lin), rng))
            R.set_w_entry(m, k, w_new)
            t = s + w_new * r


def _geee_step(A: MaskedMatrix, W, F, Z, h: NmfHyper, box, rng):
    K, Lf = F.shape
    lam_w = _full(h.lambda_w, W.shape)
    lam_z = _full(h.lambda_z, Z.shape)
    lam_f = _full(h.lambda_f, F.shape)
    maskf = A.mask.astype(float)

    def step(t: int) -> None:
        s2 = box["sigma2"]
        for k in range(K):
            # W column k against the effective right factor F Z
            R = ResidualState(A, W, F @ Z)
            S, Lv = R.w_stats(k)
            R.set_w_col(k, _draw_tn(S / s2, Lv / s2 - lam_w[:, k], rng))
            E = R.E
            for l in range(Lf):
                B = maskf * np.outer(W[:, k], Z[l])
                s = float(np.sum(B * B))
                if not (s > 0):
                    raise DegenerateError(f"f[{k},{l}] has zero likelihood precision")
                lin = (float(np.sum(B * E)) + F[k, l] * s) / s2 - lam_f[k, l]
                f_new = float(rtn(lin / (s / s2), s / s2, rng))
                E -= (f_new - F[k, l]) * B
                F[k, l] = f_new
        # Z rows against the effective left factor W F
        R = ResidualState(A, W @ F, Z)
        for l in range(Lf):
            S, Lv = R.z_stats(l)
            R.set_z_row(l, _draw_tn(S / s2, Lv / s2 - lam_z[l], rng))
        E = maskf * (A.filled() - W @ F @ Z)
        box["sigma2"] = float(sample_invgamma(h.alpha_sigma + 0.5 * A.n_observed,
                                              h.beta_sigma + 0.5 * float(np.sum(E * E)), rng))

    return step
