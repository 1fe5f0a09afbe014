"""Gibbs samplers for real-valued Bayesian matrix factorization.

Models: GGG (independent Gaussian priors), GGGM (shared isotropic prior, block
row/column updates), GGGA (per-factor ARD precision), GGGW (normal-inverse-Wishart
hierarchy on rows of W and columns of Z) and GVG (volume prior on W).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Optional, Union

import numpy as np

from .core import FactorState, GibbsConfig, GibbsTrace, MaskedMatrix, ResidualState, run_chain
from .distributions import (
    GammaParams,
    NiwParams,
    niw_posterior,
    sample_gamma,
    sample_invgamma,
    sample_mvn_precision,
    sample_niw,
)
from .errors import DegenerateError, DimensionError, ParameterError

__all__ = [
    "RmfHyper",
    "GibbsConfig",
    "GibbsTrace",
    "ggg_w_posterior",
    "ggg_sample_w_entry",
    "gggm_w_row_posterior",
    "gggm_sample_w_row",
    "sigma2_posterior",
    "sample_sigma2",
    "ggga_lambda_posterior",
    "ggga_sample_lambda_k",
    "gggw_sample_hyper",
    "gvg_w_posterior",
    "gvg_sample_w_entry",
    "fit_rmf",
]

ArrayOrScalar = Union[float, np.ndarray]


@dataclass
class RmfHyper:
    """Prior settings shared by the real-valued samplers.

    ``lambda_w`` / ``lambda_z`` may be scalars or arrays broadcastable to the
    shapes of ``W`` / ``Z``. ``niw`` defaults to ``(0, 1, K + 1, I)``.
    """

    lambda_w: ArrayOrScalar = 0.1
    lambda_z: ArrayOrScalar = 0.1
    alpha_sigma: float = 1.0
    beta_sigma: float = 1.0
    ard_alpha: float = 1.0
    ard_beta: float = 1.0
    niw: Optional[NiwParams] = None
    gamma_vol: float = 1.0

    def __post_init__(self) -> None:
        for name in ("alpha_sigma", "beta_sigma", "ard_alpha", "ard_beta"):
            if not (getattr(self, name) > 0):
                raise ParameterError(f"{name} must be positive")
        if np.any(np.asarray(self.lambda_w) < 0) or np.any(np.asarray(self.lambda_z) < 0):
            raise ParameterError("prior precisions must be nonnegative")
        if self.gamma_vol < 0:
            raise ParameterError("gamma_vol must be nonnegative")

    def niw_for(self, K: int) -> NiwParams:
        if self.niw is None:
            return NiwParams.default(K)
        if self.niw.dim != K:
            raise DimensionError(f"NIW dimension {self.niw.dim} != K={K}")
        return self.niw


def _entry(lam: ArrayOrScalar, m: int, k: int) -> float:
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0:
        return float(lam)
    if lam.ndim == 1:
        return float(lam[k])
    return float(lam[m if lam.shape[0] > 1 else 0, k if lam.shape[1] > 1 else 0])


def _column(lam: ArrayOrScalar, k: int, M: int) -> np.ndarray:
    """Prior precisions of column ``k`` of an M-row factor (scalar, K-vector or M x K)."""
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0:
        return np.full(M, float(lam))
    if lam.ndim == 1:
        return np.full(M, float(lam[k]))
    return np.broadcast_to(lam, (M, lam.shape[1]))[:, k if lam.shape[1] > 1 else 0]


def _row(lam: ArrayOrScalar, k: int, N: int) -> np.ndarray:
    """Prior precisions of row ``k`` of an N-column factor (scalar, K-vector or K x N)."""
    lam = np.asarray(lam, dtype=float)
    if lam.ndim == 0:
        return np.full(N, float(lam))
    if lam.ndim == 1:
        return np.full(N, float(lam[k]))
    return np.broadcast_to(lam, (lam.shape[0], N))[k if lam.shape[0] > 1 else 0]


def _check(A: MaskedMatrix, S: FactorState) -> None:
    if S.W.shape[0] != A.M or S.Z.shape[1] != A.N:
        raise DimensionError(f"factors {S.W.shape}, {S.Z.shape} do not match data {A.shape}")


# -- entry-level conditionals ----------------------------------------------------------

def _w_entry_stats(m: int, k: int, A: MaskedMatrix, S: FactorState) -> tuple[float, float]:
    """(sum of z_kj^2, sum of z_kj * partial residual) over observed j in row m."""
    obs = A.mask[m]
    z = S.Z[k, obs]
    partial = A.values[m, obs] - S.W[m] @ S.Z[:, obs] + S.W[m, k] * z
    return float(z @ z), float(z @ partial)


def ggg_w_posterior(m: int, k: int, A: MaskedMatrix, S: FactorState, h: RmfHyper) -> tuple[float, float]:
    """Mean and variance of the Gaussian conditional of ``w_mk``."""
    _check(A, S)
    sz, lz = _w_entry_stats(m, k, A, S)
    prec = sz / S.sigma2 + _entry(h.lambda_w, m, k)
    if not (prec > 0):
        raise DegenerateError(f"zero posterior precision for w[{m},{k}]")
    var = 1.0 / prec
    return var * lz / S.sigma2, var


def ggg_sample_w_entry(m: int, k: int, A: MaskedMatrix, S: FactorState, h: RmfHyper,
                       rng: np.random.Generator) -> float:
    """Draw ``w_mk`` from its GGG conditional."""
    mu, var = ggg_w_posterior(m, k, A, S, h)
    return float(mu + np.sqrt(var) * rng.standard_normal())


def gggm_w_row_posterior(m: int, A: MaskedMatrix, S: FactorState, prior_prec: np.ndarray,
                         prior_mean: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray]:
    """Precision matrix and ``precision @ mean`` for row ``w_m`` under a Gaussian prior."""
    _check(A, S)
    obs = A.mask[m]
    Zo = S.Z[:, obs]
    P = np.asarray(prior_prec, dtype=float) + Zo @ Zo.T / S.sigma2
    hvec = Zo @ A.values[m, obs] / S.sigma2
    if prior_mean is not None:
        hvec = hvec + np.asarray(prior_prec) @ prior_mean
    return P, hvec


def gggm_sample_w_row(m: int, A: MaskedMatrix, S: FactorState, h: RmfHyper,
                      rng: np.random.Generator) -> np.ndarray:
    """Draw row ``w_m`` from N(mu, Sigma) with Sigma^-1 = lambda I + Z_o Z_o^T / sigma^2."""
    lam = float(np.asarray(h.lambda_w).ravel()[0])
    P, hvec = gggm_w_row_posterior(m, A, S, lam * np.eye(S.K))
    return sample_mvn_precision(hvec, P, rng)


def sigma2_posterior(A: MaskedMatrix, S: FactorState, h: RmfHyper) -> tuple[float, float]:
    """Inverse-Gamma (shape, scale) of the noise variance conditional."""
    _check(A, S)
    resid = np.where(A.mask, A.values - S.reconstruction(), 0.0)
    return h.alpha_sigma + 0.5 * A.n_observed, h.beta_sigma + 0.5 * float(np.sum(resid ** 2))


def sample_sigma2(A: MaskedMatrix, S: FactorState, h: RmfHyper, rng: np.random.Generator) -> float:
    shape, scale = sigma2_posterior(A, S, h)
    return float(sample_invgamma(shape, scale, rng))


def ggga_lambda_posterior(k: int, S: FactorState, h: RmfHyper) -> GammaParams:
    """Gamma((M+N)/2 + alpha, (||W[:,k]||^2 + ||Z[k]||^2)/2 + beta)."""
    M, N = S.W.shape[0], S.Z.shape[1]
    rate = h.ard_beta + 0.5 * float(S.W[:, k] @ S.W[:, k]) + 0.5 * float(S.Z[k] @ S.Z[k])
    return GammaParams(0.5 * (M + N) + h.ard_alpha, rate)


def ggga_sample_lambda_k(k: int, S: FactorState, h: RmfHyper, rng: np.random.Generator) -> float:
    g = ggga_lambda_posterior(k, S, h)
    return float(sample_gamma(g.shape, g.rate, rng))


def gggw_sample_hyper(block: np.ndarray, prior: NiwParams, rng: np.random.Generator):
    """Draw ``(mu, Sigma)`` from the NIW conditional given the rows of ``block``.

    Pass ``W`` for the row hyperparameters and ``Z.T`` for the column ones.
    """
    return sample_niw(niw_posterior(prior, block), rng)


# -- volume prior ------------------------------------------------------------------------

def _adjugate(G: np.ndarray) -> tuple[float, np.ndarray]:
    """Determinant and adjugate of a small symmetric matrix."""
    n = G.shape[0]
    if n == 0:
        return 1.0, np.zeros((0, 0))
    if n == 1:
        return float(G[0, 0]), np.ones((1, 1))
    D = float(np.linalg.det(G))
    scale = float(np.prod(np.diag(G))) if np.all(np.diag(G) > 0) else 1.0
    if abs(D) > 1e-12 * max(scale, 1e-300):
        return D, D * np.linalg.inv(G)
    if n <= 3:
        adj = np.empty_like(G)
        for i in range(n):
            for j in range(n):
                minor = np.delete(np.delete(G, j, axis=0), i, axis=1)
                adj[i, j] = (-1) ** (i + j) * np.linalg.det(minor)
        return D, adj
    raise DegenerateError("volume prior: W[:,-k]^T W[:,-k] is singular")


def _gvg_column_terms(W: np.ndarray, k: int):
    R = np.delete(W, k, axis=1)
    D, adj = _adjugate(R.T @ R)
    return R, D, adj


def gvg_w_posterior(m: int, k: int, A: MaskedMatrix, S: FactorState, h: RmfHyper) -> tuple[float, float]:
    """Mean and variance of the GVG conditional of ``w_mk``.

    Precision ``sum z_kj^2 / sigma^2 + gamma (D - r^T Adj r)`` with
    ``r = w_{m,-k}``; the volume term of the mean is
    ``gamma r^T Adj W_{-m,-k}^T w_{-m,k}``.
    """
    _check(A, S)
    if S.K < 2:
        raise ParameterError("volume prior needs K >= 2")
    R, D, adj = _gvg_column_terms(S.W, k)
    r = R[m]
    keep = np.arange(S.W.shape[0]) != m
    s = R[keep].T @ S.W[keep, k]
    sz, lz = _w_entry_stats(m, k, A, S)
    prec = sz / S.sigma2 + h.gamma_vol * (D - r @ adj @ r)
    if not (prec > 0):
        raise DegenerateError(f"non-positive GVG precision {prec:.3g} for w[{m},{k}]; shrink gamma")
    var = 1.0 / prec
    return var * (h.gamma_vol * (r @ adj @ s) + lz / S.sigma2), var


def gvg_sample_w_entry(m: int, k: int, A: MaskedMatrix, S: FactorState, h: RmfHyper,
                       rng: np.random.Generator) -> float:
    mu, var = gvg_w_posterior(m, k, A, S, h)
    return float(mu + np.sqrt(var) * rng.standard_normal())


# -- sweeps -------------------------------------------------------------------------------

def _gauss_draw(S: np.ndarray, L: np.ndarray, lam: np.ndarray, sigma2: float,
                rng: np.random.Generator) -> np.ndarray:
    prec = S / sigma2 + lam
    if np.any(~(prec > 0)):
        raise DegenerateError("zero posterior precision; use a positive prior precision")
    var = 1.0 / prec
    return var * L / sigma2 + np.sqrt(var) * rng.standard_normal(S.shape)


def _sweep_ggg(R: ResidualState, lam_w, lam_z, sigma2, rng, k_order, after_k=None) -> None:
    M, N = R.W.shape[0], R.Z.shape[1]
    for k in k_order:
        S, L = R.w_stats(k)
        R.set_w_col(k, _gauss_draw(S, L, _column(lam_w, k, M), sigma2, rng))
        S, L = R.z_stats(k)
        R.set_z_row(k, _gauss_draw(S, L, _row(lam_z, k, N), sigma2, rng))
        if after_k is not None:
            after_k(k)


def _sweep_rows(R: ResidualState, prec: np.ndarray, prec_mean: np.ndarray, sigma2: float, rng) -> None:
    """Block updates of every row of W, then every column of Z, under Gaussian priors."""
    M, N = R.W.shape[0], R.Z.shape[1]
    pw, hw = prec[0], prec_mean[0]
    for m in range(M):
        obs = R.maskf[m] > 0
        Zo = R.Z[:, obs]
        P = pw + Zo @ Zo.T / sigma2
        hv = hw + Zo @ R.X[m, obs] / sigma2
        R.set_w_row(m, sample_mvn_precision(hv, P, rng))
    pz, hz = prec[1], prec_mean[1]
    for n in range(N):
        obs = R.maskf[:, n] > 0
        Wo = R.W[obs]
        P = pz + Wo.T @ Wo / sigma2
        hv = hz + Wo.T @ R.X[obs, n] / sigma2
        R.set_z_col(n, sample_mvn_precision(hv, P, rng))


def _sweep_gvg_w(R: ResidualState, h: RmfHyper, sigma2: float, rng) -> None:
    M, K = R.W.shape
    for k in range(K):
        # W[:,-k] is fixed while column k is refreshed, so D and Adj are shared.
        Rk, D, adj = _gvg_column_terms(R.W, k)
        S, _ = R.w_stats(k)
        t = Rk.T @ R.W[:, k]
        z = R.Z[k]
        for m in range(M):
            r = Rk[m]
            w_old = R.W[m, k]
            s = t - w_old * r
            prec = S[m] / sigma2 + h.gamma_vol * (D - r @ adj @ r)
            if not (prec > 0):
                raise DegenerateError(
                    f"non-positive GVG precision {prec:.3g} for w[{m},{k}]; shrink gamma")
            Lm = R.E[m] @ z + w_old * S[m]
            var = 1.0 / prec
            w_new = var * (h.gamma_vol * (r @ adj @ s) + Lm / sigma2) + np.sqrt(var) * rng.standard_normal()
            R.set_w_entry(m, k, w_new)
            t = s + w_new * r


def _sample_sigma2_from(R: ResidualState, h: RmfHyper, rng) -> float:
    return float(sample_invgamma(h.alpha_sigma + 0.5 * R.n_obs, h.beta_sigma + 0.5 * R.sse(), rng))


Model = Literal["GGG", "GGGM", "GGGA", "GGGW", "GVG"]


def fit_rmf(
    model: Model,
    A: MaskedMatrix,
    h: Optional[RmfHyper] = None,
    cfg: Optional[GibbsConfig] = None,
    K: Optional[int] = None,
    init: Optional[FactorState] = None,
) -> GibbsTrace:
    """Run a real-valued Gibbs chain.

    Sweep order per iteration:

    * GGG, GVG: for each ``k``, column ``k`` of W then row ``k`` of Z; then sigma^2.
    * GGGA: as GGG, with ``lambda_k`` drawn after each ``k``; then sigma^2.
    * GGGM: every row of W, every column of Z; then sigma^2.
    * GGGW: every row of W, every column of Z, NIW hyperparameters of W then Z;
      then sigma^2.

    Parameters
    ----------
    model : {"GGG", "GGGM", "GGGA", "GGGW", "GVG"}
    A : MaskedMatrix
    h : RmfHyper, optional
    cfg : GibbsConfig, optional
    K : int, optional
        Rank; required unless ``init`` is given.
    init : FactorState, optional
        Starting state; otherwise factors are i.i.d. N(0, 1) and sigma^2 = 1.

    Returns
    -------
    GibbsTrace
        ``losses`` holds the masked MSE per iteration. Samples carry ``W``, ``Z``,
        ``sigma2`` and, for GGGA, ``lambda``.
    """
    if model not in ("GGG", "GGGM", "GGGA", "GGGW", "GVG"):
        raise ParameterError(f"unknown real-valued model {model!r}")
    h = RmfHyper() if h is None else h
    cfg = GibbsConfig() if cfg is None else cfg
    rng = cfg.rng()
    if init is None:
        if K is None:
            raise ParameterError("K is required without an initial state")
        state = FactorState(rng.standard_normal((A.M, K)), rng.standard_normal((K, A.N)), 1.0)
    else:
        state = init.copy()
        _check(A, state)
    K = state.K
    if model == "GVG" and K < 2:
        raise ParameterError("GVG needs K >= 2")
    W, Z = state.W, state.Z
    R = ResidualState(A, W, Z)
    box = {"sigma2": state.sigma2}
    lam = np.full(K, h.ard_alpha / h.ard_beta)
    niw = h.niw_for(K)
    hyper = {"mu_w": np.zeros(K), "Sigma_w": np.eye(K), "mu_z": np.zeros(K), "Sigma_z": np.eye(K)}

    def draw_lambda(k: int) -> None:
        rate = h.ard_beta + 0.5 * float(W[:, k] @ W[:, k]) + 0.5 * float(Z[k] @ Z[k])
        lam[k] = sample_gamma(0.5 * (A.M + A.N) + h.ard_alpha, rate, rng)

    def step(t: int) -> None:
        R.refresh()
        s2 = box["sigma2"]
        if model == "GGG":
            _sweep_ggg(R, h.lambda_w, h.lambda_z, s2, rng, range(K))
        elif model == "GGGA":
            _sweep_ggg(R, lam, lam, s2, rng, range(K), after_k=draw_lambda)
        elif model == "GGGM":
            lw = float(np.asarray(h.lambda_w).ravel()[0])
            lz = float(np.asarray(h.lambda_z).ravel()[0])
            _sweep_rows(R, (lw * np.eye(K), lz * np.eye(K)), (np.zeros(K), np.zeros(K)), s2, rng)
        elif model == "GGGW":
            Pw = np.linalg.inv(hyper["Sigma_w"])
            Pz = np.linalg.inv(hyper["Sigma_z"])
            _sweep_rows(R, (Pw, Pz), (Pw @ hyper["mu_w"], Pz @ hyper["mu_z"]), s2, rng)
            hyper["mu_w"], hyper["Sigma_w"] = gggw_sample_hyper(W, niw, rng)
            hyper["mu_z"], hyper["Sigma_z"] = gggw_sample_hyper(Z.T, niw, rng)
        else:
            _sweep_gvg_w(R, h, s2, rng)
            for k in range(K):
                S, L = R.z_stats(k)
                R.set_z_row(k, _gauss_draw(S, L, _row(h.lambda_z, k, A.N), s2, rng))
        R.refresh()
        box["sigma2"] = _sample_sigma2_from(R, h, rng)

    def snapshot() -> dict:
        snap = {"W": W.copy(), "Z": Z.copy(), "sigma2": box["sigma2"]}
        if model == "GGGA":
            snap["lambda"] = lam.copy()
        if model == "GGGW":
            snap.update({key: np.copy(v) for key, v in hyper.items()})
        return snap

    losses, samples = run_chain(cfg, step, snapshot, R.mse)
    final = FactorState(W, Z, box["sigma2"])
    extras = {"lambda": lam.copy()} if model == "GGGA" else {}
    if model == "GGGW":
        extras.update(hyper)
    return GibbsTrace(losses, samples, cfg, final, extras)
