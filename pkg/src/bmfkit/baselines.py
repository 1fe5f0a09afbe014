"""Deterministic baselines: alternating least squares and multiplicative-update NMF."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
from scipy import linalg

from .core import FactorState, MaskedMatrix
from .errors import InputError, LinearSolveError, ParameterError

_GRAD_GUARD = 1e-14


@dataclass
class AlsConfig:
    """Settings for :func:`als_fit`.

    ``mode`` is one of ``full`` (closed-form updates, full mask required),
    ``masked`` (closed-form updates over observed entries), ``gradient``
    (normalized gradient steps per row/column) or ``sgd`` (normalized
    per-entry steps). ``bias`` appends a fixed ones column to ``W`` and a fixed
    ones row to ``Z`` together with the free features that pair with them.
    ``rebalance`` rescales each free factor pair after a closed-form sweep so
    that ``lambda_w ||w_k||^2 = lambda_z ||z_k||^2``; ``W Z`` is unchanged and the
    regularized objective cannot increase.
    """

    K: int = 2
    lambda_w: float = 0.1
    lambda_z: float = 0.1
    max_iters: int = 100
    tol: float = 1e-10
    mode: Literal["full", "masked", "gradient", "sgd"] = "masked"
    eta_w: float = 0.01
    eta_z: float = 0.01
    bias: bool = False
    rebalance: bool = True

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ParameterError("K must be positive")
        if self.lambda_w < 0 or self.lambda_z < 0:
            raise ParameterError("regularization must be nonnegative")
        if not (self.tol > 0):
            raise ParameterError("tol must be positive")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be positive")
        if self.mode not in ("full", "masked", "gradient", "sgd"):
            raise ParameterError(f"unknown mode {self.mode!r}")
        if self.eta_w < 0 or self.eta_z < 0:
            raise ParameterError("step sizes must be nonnegative")


@dataclass
class NmfConfig:
    """Settings for :func:`nmf_mu_fit`."""

    K: int = 2
    lambda_w: float = 0.0
    lambda_z: float = 0.0
    eps: float = 1e-9
    max_iters: int = 500
    tol: float = 1e-12

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ParameterError("K must be positive")
        if self.lambda_w < 0 or self.lambda_z < 0:
            raise ParameterError("regularization must be nonnegative")
        if not (self.eps > 0):
            raise ParameterError("eps must be positive")
        if not (self.tol > 0):
            raise ParameterError("tol must be positive")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be positive")


# -- objective --------------------------------------------------------------------

def _sse(A: MaskedMatrix, X: np.ndarray, P: np.ndarray) -> float:
    r = np.where(A.mask, X - P, 0.0)
    return float(np.sum(r * r))


def als_objective(A: MaskedMatrix, S: FactorState, lambda_w: float, lambda_z: float) -> float:
    """Regularized objective ``||mask*(A - WZ)||^2 + lambda_w||W||^2 + lambda_z||Z||^2``."""
    return (_sse(A, A.filled(), S.reconstruction())
            + lambda_w * float(np.sum(S.W ** 2)) + lambda_z * float(np.sum(S.Z ** 2)))


def _converged(hist: list[float], tol: float) -> bool:
    prev, cur = hist[-2], hist[-1]
    return abs(prev - cur) <= tol * max(abs(prev), np.finfo(float).tiny)


# -- ridge solves -------------------------------------------------------------------

def _ridge(X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Solve ``(X^T X + lam I) B = X^T Y`` by Cholesky."""
    G = X.T @ X
    G[np.diag_indices_from(G)] += lam
    try:
        c = linalg.cho_factor(G, check_finite=True)
        return linalg.cho_solve(c, X.T @ Y)
    except (linalg.LinAlgError, ValueError) as exc:
        raise LinearSolveError(
            "normal matrix is singular; use a positive regularization or a full-rank start"
        ) from exc


def _masked_ridge(X: np.ndarray, Y: np.ndarray, mask: np.ndarray, lam: float, out: np.ndarray) -> None:
    """Column-wise ridge solves using only the rows observed in each column of ``mask``.

    Columns sharing an observation pattern are solved together.
    """
    patterns, inverse = np.unique(mask.T, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    for g, pat in enumerate(patterns):
        cols = np.flatnonzero(inverse == g)
        rows = np.flatnonzero(pat)
        out[:, cols] = _ridge(X[rows], Y[np.ix_(rows, cols)], lam)


# -- ALS ------------------------------------------------------------------------------

class _Layout:
    """Free/fixed index bookkeeping for the optional bias augmentation."""

    def __init__(self, K: int, bias: bool):
        self.bias = bias
        self.paired = np.arange(1, K + 1) if bias else np.arange(K)
        if bias:
            self.Kt = K + 2
            self.z_free = np.arange(1, K + 2)
            self.z_fixed = np.array([0])
            self.w_free = np.arange(0, K + 1)
            self.w_fixed = np.array([K + 1])
        else:
            self.Kt = K
            self.z_free = self.w_free = np.arange(K)
            self.z_fixed = self.w_fixed = np.array([], dtype=int)

    def pin(self, W: np.ndarray, Z: np.ndarray) -> None:
        if self.bias:
            W[:, -1] = 1.0
            Z[0, :] = 1.0


def _als_closed_form_sweep(X, mask, W, Z, cfg: AlsConfig, lay: _Layout, full: bool) -> None:
    # Z step
    design = W[:, lay.z_free]
    target = X - W[:, lay.z_fixed] @ Z[lay.z_fixed, :]
    if full:
        Z[lay.z_free, :] = _ridge(design, target, cfg.lambda_z)
    else:
        block = np.empty((lay.z_free.size, X.shape[1]))
        _masked_ridge(design, target, mask, cfg.lambda_z, block)
        Z[lay.z_free, :] = block
    # W step on the transposed problem
    design = Z[lay.w_free, :].T
    target = X.T - (W[:, lay.w_fixed] @ Z[lay.w_fixed, :]).T
    if full:
        W[:, lay.w_free] = _ridge(design, target, cfg.lambda_w).T
    else:
        block = np.empty((lay.w_free.size, X.shape[0]))
        _masked_ridge(design, target, mask.T, cfg.lambda_w, block)
        W[:, lay.w_free] = block.T


def _rebalance(W, Z, cfg: AlsConfig, lay: _Layout) -> None:
    if cfg.lambda_w <= 0 or cfg.lambda_z <= 0:
        return
    k = lay.paired
    nw = np.sum(W[:, k] ** 2, axis=0)
    nz = np.sum(Z[k] ** 2, axis=1)
    ok = (nw > 0) & (nz > 0)
    s = np.ones(k.size)
    s[ok] = ((cfg.lambda_z * nz[ok]) / (cfg.lambda_w * nw[ok])) ** 0.25
    W[:, k] *= s
    Z[k] /= s[:, None]


def _normalized(g: np.ndarray, axis: int) -> np.ndarray:
    norm = np.linalg.norm(g, axis=axis, keepdims=True)
    return np.where(norm < _GRAD_GUARD, 0.0, g / np.where(norm < _GRAD_GUARD, 1.0, norm))


def _als_gradient_sweep(X, mask, W, Z, cfg: AlsConfig, lay: _Layout) -> None:
    R = np.where(mask, W @ Z - X, 0.0)
    gz = 2.0 * W[:, lay.z_free].T @ R + 2.0 * cfg.lambda_z * Z[lay.z_free, :]
    Z[lay.z_free, :] -= cfg.eta_z * _normalized(gz, axis=0)
    R = np.where(mask, W @ Z - X, 0.0)
    gw = 2.0 * R @ Z[lay.w_free, :].T + 2.0 * cfg.lambda_w * W[:, lay.w_free]
    W[:, lay.w_free] -= cfg.eta_w * _normalized(gw, axis=1)


def per_example_gradients(w: np.ndarray, z: np.ndarray, a: float, lambda_w: float, lambda_z: float):
    """Gradients of ``(a - w.z)^2 + lambda_w||w||^2 + lambda_z||z||^2`` w.r.t. ``w`` and ``z``."""
    e = float(w @ z) - a
    return 2.0 * e * z + 2.0 * lambda_w * w, 2.0 * e * w + 2.0 * lambda_z * z


def als_sgd_step(S: FactorState, a_mn: float, m: int, n: int, cfg: AlsConfig) -> FactorState:
    """One stochastic step on entry ``(m, n)``: update ``z_n`` then ``w_m``.

    Each step moves by ``eta`` along the normalized negative gradient of the
    per-example regularized loss; ``w_m`` sees the refreshed ``z_n``.
    """
    out = S.copy()
    _sgd_entry(out.W, out.Z, a_mn, m, n, cfg)
    return out


def _sgd_entry(W, Z, a, m, n, cfg: AlsConfig, w_free=None, z_free=None) -> None:
    w_free = slice(None) if w_free is None else w_free
    z_free = slice(None) if z_free is None else z_free
    _, gz = per_example_gradients(W[m], Z[:, n], a, cfg.lambda_w, cfg.lambda_z)
    g = gz[z_free]
    nrm = np.linalg.norm(g)
    if nrm >= _GRAD_GUARD:
        Z[z_free, n] -= cfg.eta_z * g / nrm
    gw, _ = per_example_gradients(W[m], Z[:, n], a, cfg.lambda_w, cfg.lambda_z)
    g = gw[w_free]
    nrm = np.linalg.norm(g)
    if nrm >= _GRAD_GUARD:
        W[m, w_free] -= cfg.eta_w * g / nrm


def als_fit(
    A: MaskedMatrix,
    cfg: AlsConfig,
    rng: np.random.Generator,
    init: Optional[FactorState] = None,
    callback: Optional[Callable[[int, FactorState], None]] = None,
) -> tuple[FactorState, np.ndarray]:
    """Fit ``A ~ W Z`` by alternating least squares.

    Parameters
    ----------
    A : MaskedMatrix
    cfg : AlsConfig
    rng : numpy.random.Generator
        Used for the standard normal initialization.
    init : FactorState, optional
        Starting factors (with the bias layout already applied when ``cfg.bias``).
    callback : callable, optional
        Called as ``callback(sweep, state)`` after every sweep.

    Returns
    -------
    state : FactorState
        With ``cfg.bias`` the factors are ``W = [w0, W, 1]`` and ``Z = [1; Z; z0]``.
    history : ndarray
        Masked squared Frobenius loss at initialization and after each sweep.
    """
    if cfg.mode == "full" and not A.mask.all():
        raise InputError("mode='full' requires a fully observed matrix")
    lay = _Layout(cfg.K, cfg.bias)
    M, N = A.shape
    if init is None:
        W = rng.standard_normal((M, lay.Kt))
        Z = rng.standard_normal((lay.Kt, N))
    else:
        W, Z = init.W.copy(), init.Z.copy()
    lay.pin(W, Z)
    X = A.filled()
    mask = A.mask
    hist = [_sse(A, X, W @ Z)]
    obs = np.argwhere(mask.T)  # (n, m) pairs, n outer
    for it in range(cfg.max_iters):
        if cfg.mode in ("full", "masked"):
            _als_closed_form_sweep(X, mask, W, Z, cfg, lay, cfg.mode == "full")
            if cfg.rebalance:
                _rebalance(W, Z, cfg, lay)
        elif cfg.mode == "gradient":
            _als_gradient_sweep(X, mask, W, Z, cfg, lay)
        else:
            for n, m in obs:
                _sgd_entry(W, Z, X[m, n], m, n, cfg, lay.w_free, lay.z_free)
        hist.append(_sse(A, X, W @ Z))
        if callback is not None:
            callback(it, FactorState(W.copy(), Z.copy()))
        if _converged(hist, cfg.tol):
            break
    return FactorState(W, Z), np.asarray(hist)


# -- multiplicative-update NMF --------------------------------------------------------

def nmf_mu_fit(
    A: MaskedMatrix,
    cfg: NmfConfig,
    rng: np.random.Generator,
    init: Optional[FactorState] = None,
) -> tuple[FactorState, np.ndarray]:
    """Nonnegative factorization by multiplicative updates.

    For each ``k`` row ``k`` of ``Z`` is refreshed, then column ``k`` of ``W``:
    ``z_kn <- z_kn * max((W^T A)_kn - lambda_z z_kn, 0) / ((W^T W Z)_kn + eps)``
    and symmetrically for ``W``. Products are restricted to observed entries.

    Returns
    -------
    state : FactorState
    history : ndarray
        Masked squared Frobenius loss at initialization and after each sweep.
    """
    X = A.filled()
    mask = A.mask
    if np.any(X[mask] < 0):
        raise InputError("NMF requires nonnegative observed entries")
    M, N = A.shape
    if init is None:
        W = rng.random((M, cfg.K))
        Z = rng.random((cfg.K, N))
    else:
        W, Z = init.W.copy(), init.Z.copy()
        if np.any(W < 0) or np.any(Z < 0):
            raise InputError("NMF initialization must be nonnegative")
    Mf = mask.astype(float)
    MX = Mf * X
    P = W @ Z
    hist = [_sse(A, X, P)]
    for _ in range(cfg.max_iters):
        for k in range(cfg.K):
            wk = W[:, k]
            num = wk @ MX - cfg.lambda_z * Z[k]
            den = wk @ (Mf * P) + cfg.eps
            znew = Z[k] * np.maximum(num, 0.0) / den
            P += np.outer(wk, znew - Z[k])
            Z[k] = znew
            zk = Z[k]
            num = MX @ zk - cfg.lambda_w * W[:, k]
            den = (Mf * P) @ zk + cfg.eps
            wnew = W[:, k] * np.maximum(num, 0.0) / den
            P += np.outer(wnew - W[:, k], zk)
            W[:, k] = wnew
        P = W @ Z  # drop accumulated rounding
        hist.append(_sse(A, X, P))
        if _converged(hist, cfg.tol):
            break
    return FactorState(W, Z), np.asarray(hist)
