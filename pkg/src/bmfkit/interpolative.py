"""Column interpolative decomposition.

Exact ID by determinant maximization over a row basis with Cramer's rule, a
skeleton (CUR) check, and Bayesian ID samplers: GBT, GBTN (hierarchical GTN
hyperprior), their ARD versions, the aggressive GBT sampler and IID (importance
weighted swaps). Every Bayesian variant writes ``A ~ X Y`` with ``X`` equal to
``A`` on the selected columns ``J`` and zero elsewhere, and ``Y`` bounded in
``[a, b]`` entrywise.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy.special import expit

from .core import GibbsConfig, GibbsTrace, MaskedMatrix, run_chain
from .distributions import GtnParams, rgtn, sample_gamma, sample_invgamma
from .errors import (
    DimensionError,
    InfeasibleSearchError,
    ParameterError,
    RankError,
    SingularIntersectionError,
)

__all__ = [
    "IdHyper",
    "IdState",
    "exact_column_id",
    "exact_row_id",
    "cramer_expansion",
    "skeleton_check",
    "numerical_rank",
    "importance_from_scores",
    "gbt_y_posterior",
    "gbt_sample_y",
    "swap_log_odds",
    "gbt_swap_state",
    "ard_log_odds",
    "ard_flip",
    "iid_swap",
    "post_process",
    "fit_id",
    "fit_row_id",
    "ID_VARIANTS",
]

ID_VARIANTS = ("GBT", "GBTN", "GBT-ARD", "GBTN-ARD", "GBT-aggressive", "IID")
Variant = Literal["GBT", "GBTN", "GBT-ARD", "GBTN-ARD", "GBT-aggressive", "IID"]

MAX_SUBSETS = 100_000
RANK_TOL = 1e-8
TIE_TOL = 1e-10
P_CLAMP = 1e-6


# -- exact ID ----------------------------------------------------------------------------

def numerical_rank(A, tol: float = RANK_TOL) -> int:
    """Number of singular values above ``tol * sigma_max``."""
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > tol * s[0]))


def cramer_expansion(Ctil, Mblk) -> np.ndarray:
    """Expansion coefficients ``e_kl = det(Ctil with column k := Mblk[:, l]) / det(Ctil)``."""
    Ctil = np.asarray(Ctil, dtype=float)
    Mblk = np.asarray(Mblk, dtype=float)
    R = Ctil.shape[0]
    if Ctil.shape != (R, R) or Mblk.ndim != 2 or Mblk.shape[0] != R:
        raise DimensionError(f"Ctil {Ctil.shape} and Mblk {Mblk.shape} do not conform")
    d = np.linalg.det(Ctil)
    if d == 0:
        raise SingularIntersectionError("Ctil is singular")
    E = np.empty((R, Mblk.shape[1]))
    for k in range(R):
        T = np.repeat(Ctil[None], Mblk.shape[1], axis=0)
        T[:, :, k] = Mblk.T
        E[k] = np.linalg.det(T) / d
    return E


def _best_subset(F: np.ndarray) -> tuple[int, ...]:
    R, N = F.shape
    n_sub = math.comb(N, R)
    if n_sub > MAX_SUBSETS:
        raise InfeasibleSearchError(
            f"exhaustive search infeasible: C({N},{R}) = {n_sub} > {MAX_SUBSETS}")
    subsets = np.array(list(itertools.combinations(range(N), R)), dtype=np.int64)
    dets = np.abs(np.linalg.det(np.transpose(F[:, subsets], (1, 0, 2))))
    # first subset (lexicographic) within relative TIE_TOL of the maximum
    best = int(np.argmax(dets >= dets.max() * (1.0 - TIE_TOL)))
    return tuple(int(j) for j in subsets[best])


def exact_column_id(A, R: int) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Column ID ``A = C W`` with ``C = A[:, J]``, ``W[:, J] = I`` and ``max |W| <= 1``.

    ``J`` maximizes ``|det F[:, J]|`` over all R-subsets, where ``F`` is an R x N
    row basis of ``A``. Ties are broken towards the lexicographically first subset.

    Raises
    ------
    RankError
        If the numerical rank of ``A`` differs from ``R``.
    InfeasibleSearchError
        If ``C(N, R)`` exceeds 100000.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise DimensionError("A must be 2-D")
    R = int(R)
    if R < 1:
        raise ParameterError("R must be at least 1")
    rank = numerical_rank(A)
    if rank != R:
        raise RankError(f"numerical rank {rank} != requested rank {R}")
    N = A.shape[1]
    _, s, Vt = np.linalg.svd(A, full_matrices=False)
    F = s[:R, None] * Vt[:R]
    J = list(_best_subset(F))
    I = [n for n in range(N) if n not in J]
    W = np.zeros((R, N))
    W[:, J] = np.eye(R)
    if I:
        W[:, I] = cramer_expansion(F[:, J], F[:, I])
    return A[:, J].copy(), W, J


def exact_row_id(A, R: int) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Row ID ``A = W R_`` with ``R_ = A[I, :]``; the transpose of :func:`exact_column_id`."""
    C, W, J = exact_column_id(np.asarray(A, dtype=float).T, R)
    return W.T, C.T, J


def skeleton_check(A, I_rows, J_cols) -> float:
    """Relative Frobenius error of the skeleton ``A ~ C U^-1 R``.

    ``C = A[:, J]``, ``R = A[I, :]`` and ``U = A[I, J]``.
    """
    A = np.asarray(A, dtype=float)
    I_rows = list(I_rows)
    J_cols = list(J_cols)
    U = A[np.ix_(I_rows, J_cols)]
    if U.shape[0] != U.shape[1] or U.shape[0] == 0:
        raise SingularIntersectionError(f"intersection block must be square, got {U.shape}")
    if numerical_rank(U, 1e-12) < U.shape[0]:
        raise SingularIntersectionError("intersection block is singular")
    approx = A[:, J_cols] @ np.linalg.solve(U, A[I_rows, :])
    nrm = np.linalg.norm(A)
    err = np.linalg.norm(A - approx)
    return float(err / nrm) if nrm > 0 else float(err)


# -- Bayesian ID -------------------------------------------------------------------------

def importance_from_scores(raw) -> np.ndarray:
    """Squash raw importance scores with the logistic function, clamped to [1e-6, 1 - 1e-6]."""
    return np.clip(expit(np.asarray(raw, dtype=float)), P_CLAMP, 1.0 - P_CLAMP)


@dataclass
class IdHyper:
    """Priors for the Bayesian ID samplers.

    ``mu`` / ``tau`` are the GTN parent mean and precision of every ``y_kl``
    (scalars or N x N arrays). ``mu_mu``, ``tau_mu``, ``alpha_t``, ``beta_t``
    parametrize the GBTN hyperprior. ``importance`` is the IID column
    importance in (0, 1). ``nu`` is the number of Y sweeps after each ARD pass.
    """

    a: float = -1.0
    b: float = 1.0
    alpha_sigma: float = 0.1
    beta_sigma: float = 1.0
    mu: float = 0.0
    tau: float = 1.0
    mu_mu: float = 0.0
    tau_mu: float = 0.1
    alpha_t: float = 1.0
    beta_t: float = 1.0
    importance: Optional[np.ndarray] = None
    nu: int = 5

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ParameterError(f"need a < b, got {self.a}, {self.b}")
        if not (self.alpha_sigma > 0 and self.beta_sigma > 0):
            raise ParameterError("alpha_sigma and beta_sigma must be positive")
        if np.any(np.asarray(self.tau) <= 0) or self.tau_mu <= 0:
            raise ParameterError("precisions must be positive")
        if not (self.alpha_t > 0 and self.beta_t > 0):
            raise ParameterError("alpha_t and beta_t must be positive")
        if int(self.nu) < 0:
            raise ParameterError("nu must be nonnegative")
        self.nu = int(self.nu)
        if self.importance is not None:
            p = np.asarray(self.importance, dtype=float)
            if np.any(p <= 0) or np.any(p >= 1):
                raise ParameterError("importance entries must lie in (0, 1)")
            self.importance = p


@dataclass
class IdState:
    """Chain state: selection vector ``r``, coefficients ``Y`` and basis ``X``.

    ``X`` equals the zero-filled data on columns with ``r = 1`` and zero on the rest.
    """

    r: np.ndarray
    Y: np.ndarray
    X: np.ndarray
    sigma2: float = 1.0
    mu: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    @property
    def J(self) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.r)]

    @property
    def I(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(~self.r.astype(bool))]

    def copy(self) -> "IdState":
        return IdState(self.r.copy(), self.Y.copy(), self.X.copy(), self.sigma2,
                       None if self.mu is None else self.mu.copy(),
                       None if self.tau is None else self.tau.copy())


def _basis(Afill: np.ndarray, r: np.ndarray) -> np.ndarray:
    return Afill * r.astype(float)[None, :]


def _entry_params(st: IdState, h: IdHyper, N: int) -> tuple[np.ndarray, np.ndarray]:
    mu = np.broadcast_to(h.mu if st.mu is None else st.mu, (N, N))
    tau = np.broadcast_to(h.tau if st.tau is None else st.tau, (N, N))
    return mu, tau


def gbt_y_posterior(k: int, l: int, A: MaskedMatrix, st: IdState, h: IdHyper) -> GtnParams:
    """GTN conditional of ``y_kl``: precision ``sum_i x_ik^2 / sigma2 + tau_kl``.

    Sums run over rows observed in column ``l``.
    """
    N = A.N
    mu, tau = _entry_params(st, h, N)
    obs = A.mask[:, l]
    x = st.X[obs]
    xk = x[:, k]
    partial = A.values[obs, l] - x @ st.Y[:, l] + xk * st.Y[k, l]
    prec = float(xk @ xk) / st.sigma2 + float(tau[k, l])
    mean = (float(xk @ partial) / st.sigma2 + float(tau[k, l] * mu[k, l])) / prec
    return GtnParams(mean, prec, h.a, h.b)


def gbt_sample_y(k: int, l: int, A: MaskedMatrix, st: IdState, h: IdHyper,
                 rng: np.random.Generator) -> float:
    p = gbt_y_posterior(k, l, A, st, h)
    return float(rgtn(p.mu, p.tau, p.a, p.b, rng))


def _sse_for(A: MaskedMatrix, X: np.ndarray, Y: np.ndarray) -> float:
    r = np.where(A.mask, A.values - X @ Y, 0.0)
    return float(np.sum(r * r))


def swap_log_odds(st: IdState, j: int, i: int, A: MaskedMatrix) -> float:
    """Log likelihood ratio of ``(r_j, r_i) = (0, 1)`` against ``(1, 0)`` at fixed ``Y``, sigma2."""
    if not (st.r[j] and not st.r[i]):
        raise ParameterError("need j in J and i in I")
    Afill = A.filled()
    r_new = st.r.copy()
    r_new[j], r_new[i] = False, True
    old = _sse_for(A, st.X, st.Y)
    new = _sse_for(A, _basis(Afill, r_new), st.Y)
    return -(new - old) / (2.0 * st.sigma2)


def _apply_r(st: IdState, A: MaskedMatrix, r_new: np.ndarray) -> None:
    st.r = r_new
    st.X = _basis(A.filled(), r_new)


def gbt_swap_state(st: IdState, j: int, i: int, A: MaskedMatrix, h: IdHyper,
                   rng: np.random.Generator, log_prior: float = 0.0) -> np.ndarray:
    """Swap ``j in J`` for ``i in I`` with probability ``o / (1 + o)``; rebuilds ``X``."""
    lo = swap_log_odds(st, j, i, A) + log_prior
    if rng.random() < expit(lo):
        r_new = st.r.copy()
        r_new[j], r_new[i] = False, True
        _apply_r(st, A, r_new)
    return st.r


def _iid_log_prior(p: np.ndarray, j: int, i: int) -> float:
    pj = min(max(float(p[j]), P_CLAMP), 1.0 - P_CLAMP)
    pi = min(max(float(p[i]), P_CLAMP), 1.0 - P_CLAMP)
    return math.log((1.0 - pj) / pj) + math.log(pi / (1.0 - pi))


def iid_swap(st: IdState, j: int, i: int, A: MaskedMatrix, h: IdHyper, p,
             rng: np.random.Generator) -> np.ndarray:
    """GBT swap with the odds scaled by ``((1 - p_j) / p_j) (p_i / (1 - p_i))``."""
    return gbt_swap_state(st, j, i, A, h, rng, _iid_log_prior(np.asarray(p, dtype=float), j, i))


def ard_log_odds(st: IdState, j: int, A: MaskedMatrix, prior_on: float = 0.5) -> float:
    """Log of ``p(r_j = 0 | ...) / p(r_j = 1 | ...)`` at fixed ``Y`` and sigma2."""
    Afill = A.filled()
    r_on, r_off = st.r.copy(), st.r.copy()
    r_on[j], r_off[j] = True, False
    sse_on = _sse_for(A, _basis(Afill, r_on), st.Y)
    sse_off = _sse_for(A, _basis(Afill, r_off), st.Y)
    return math.log((1.0 - prior_on) / prior_on) - (sse_off - sse_on) / (2.0 * st.sigma2)


def ard_flip(st: IdState, j: int, A: MaskedMatrix, h: IdHyper, rng: np.random.Generator,
             prior_on: float = 0.5) -> bool:
    """Redraw ``r_j`` from its conditional; ``r_j = 0`` with probability ``o / (1 + o)``.

    The last selected column is never switched off.
    """
    off = rng.random() < expit(ard_log_odds(st, j, A, prior_on))
    if off and st.r[j] and st.r.sum() == 1:
        off = False
    if bool(st.r[j]) == off:
        r_new = st.r.copy()
        r_new[j] = not off
        _apply_r(st, A, r_new)
    return bool(st.r[j])


def post_process(st: IdState) -> tuple[np.ndarray, np.ndarray]:
    """``C = X[:, J]`` and ``W = Y[J, :]`` with ``W[:, J]`` overwritten by the identity."""
    J = st.J
    C = st.X[:, J].copy()
    W = st.Y[J, :].copy()
    W[:, J] = np.eye(len(J))
    return C, W


class _IdChain:
    """Incremental residual bookkeeping for the Bayesian ID samplers."""

    def __init__(self, A: MaskedMatrix, st: IdState, h: IdHyper, hierarchical: bool,
                 rng: np.random.Generator):
        self.A = A
        self.Afill = A.filled()
        self.maskf = A.mask.astype(float)
        self.st = st
        self.h = h
        self.hier = hierarchical
        self.rng = rng
        self.refresh()

    def refresh(self) -> None:
        st = self.st
        self.E = self.maskf * (self.Afill - st.X @ st.Y)

    def sse(self) -> float:
        return float(np.sum(self.E * self.E))

    def mse(self) -> float:
        return self.sse() / self.A.n_observed

    def sse_with(self, r: np.ndarray) -> float:
        E = self.maskf * (self.Afill - _basis(self.Afill, r) @ self.st.Y)
        return float(np.sum(E * E))

    def set_r(self, r: np.ndarray) -> None:
        _apply_r(self.st, self.A, r)
        self.refresh()

    def sample_sigma2(self) -> None:
        h = self.h
        self.st.sigma2 = float(sample_invgamma(h.alpha_sigma + 0.5 * self.A.n_observed,
                                               h.beta_sigma + 0.5 * self.sse(), self.rng))

    def sweep_y(self) -> None:
        st, h, rng = self.st, self.h, self.rng
        N = st.Y.shape[0]
        mu, tau = _entry_params(st, h, N)
        for k in range(N):
            xk = st.X[:, k]
            S = (xk * xk) @ self.maskf
            L = xk @ self.E + st.Y[k] * S
            prec = S / st.sigma2 + tau[k]
            mean = (L / st.sigma2 + tau[k] * mu[k]) / prec
            y = rgtn(mean, prec, h.a, h.b, rng)
            self.E -= self.maskf * np.outer(xk, y - st.Y[k])
            st.Y[k] = y
            if self.hier:
                t_mu = st.tau[k] + h.tau_mu
                st.mu[k] = ((st.tau[k] * y + h.tau_mu * h.mu_mu) / t_mu
                            + rng.standard_normal(N) / np.sqrt(t_mu))
                st.tau[k] = sample_gamma(h.alpha_t + 0.5, h.beta_t + 0.5 * (y - st.mu[k]) ** 2, rng)

    def propose(self, r: np.ndarray) -> Optional[tuple[int, int]]:
        J = np.flatnonzero(r)
        I = np.flatnonzero(~r)
        if J.size == 0 or I.size == 0:
            return None
        return int(J[self.rng.integers(J.size)]), int(I[self.rng.integers(I.size)])

    def swap(self, log_prior_fn=None) -> None:
        st = self.st
        pair = self.propose(st.r)
        if pair is None:
            return
        j, i = pair
        r_new = st.r.copy()
        r_new[j], r_new[i] = False, True
        lo = -(self.sse_with(r_new) - self.sse()) / (2.0 * st.sigma2)
        if log_prior_fn is not None:
            lo += log_prior_fn(j, i)
        if self.rng.random() < expit(lo):
            self.set_r(r_new)

    def ard_pass(self) -> None:
        st = self.st
        N = st.r.size
        for j in range(N):
            r_on, r_off = st.r.copy(), st.r.copy()
            r_on[j], r_off[j] = True, False
            lo = -(self.sse_with(r_off) - self.sse_with(r_on)) / (2.0 * st.sigma2)
            off = self.rng.random() < expit(lo)
            if off and st.r[j] and st.r.sum() == 1:
                off = False
            if bool(st.r[j]) == off:
                self.set_r(r_off if off else r_on)


def _init_state(A: MaskedMatrix, K: Optional[int], h: IdHyper, ard: bool, hierarchical: bool,
                rng: np.random.Generator, init_J=None) -> IdState:
    N = A.N
    r = np.zeros(N, dtype=bool)
    if init_J is not None:
        J0 = sorted({int(j) for j in init_J})
        if not J0 or J0[0] < 0 or J0[-1] >= N:
            raise ParameterError("init_J must be a nonempty subset of column indices")
        if K is not None and len(J0) != K:
            raise ParameterError("init_J size must equal K")
        r[J0] = True
    elif K is None:
        if not ard:
            raise ParameterError("K is required for fixed-size variants")
        r[:] = True
    else:
        if not 1 <= K <= N:
            raise ParameterError(f"K must lie in 1..{N}, got {K}")
        r[rng.choice(N, size=K, replace=False)] = True
    mu = np.full((N, N), h.mu_mu) if hierarchical else None
    tau = np.full((N, N), 1.0) if hierarchical else None
    m0 = np.broadcast_to(h.mu if mu is None else mu, (N, N))
    t0 = np.broadcast_to(h.tau if tau is None else tau, (N, N))
    Y = rgtn(m0, t0, h.a, h.b, rng)
    return IdState(r, Y, _basis(A.filled(), r), 1.0, mu, tau)


def fit_id(variant: Variant, A: MaskedMatrix, K: Optional[int] = None,
           h: Optional[IdHyper] = None, cfg: Optional[GibbsConfig] = None,
           init_J=None) -> GibbsTrace:
    """Run a Bayesian ID chain.

    Iteration order:

    * GBT, GBTN, IID: one swap proposal (``j`` uniform on J, ``i`` uniform on I),
      rebuild X, sigma^2, then one sweep over ``y_kl`` row by row (GBTN also
      redraws ``mu_kl`` and ``tau_kl`` after each entry).
    * ARD variants: redraw every ``r_j`` in turn, sigma^2, then ``nu`` Y sweeps.
      ``K`` sets the initial size; without it all columns start selected.
      ``init_J`` fixes the starting selection; otherwise it is drawn uniformly.
    * GBT-aggressive: choose between the current state and the stored proposal,
      draw a new proposal, sigma^2, then sweep Y for both.

    Unobserved entries are zero-filled in X and excluded from every likelihood term.

    Returns
    -------
    GibbsTrace
        ``state`` is the final :class:`IdState`. Samples carry ``r``, ``Y`` and
        ``sigma2``; ``extras["J_size"]`` holds |J| per iteration.
    """
    if variant not in ID_VARIANTS:
        raise ParameterError(f"unknown ID variant {variant!r}")
    h = IdHyper() if h is None else h
    cfg = GibbsConfig() if cfg is None else cfg
    rng = cfg.rng()
    ard = variant.endswith("ARD")
    hier = variant.startswith("GBTN")
    st = _init_state(A, K, h, ard, hier, rng, init_J)
    chain = _IdChain(A, st, h, hier, rng)
    sizes = []
    log_prior_fn = None
    if variant == "IID":
        p = np.full(A.N, 0.5) if h.importance is None else np.asarray(h.importance, dtype=float)
        if p.shape != (A.N,):
            raise DimensionError(f"importance must have length {A.N}")
        log_prior_fn = lambda j, i: _iid_log_prior(p, j, i)  # noqa: E731
    agg = {}
    if variant == "GBT-aggressive":
        pair = chain.propose(st.r)
        r2 = st.r.copy()
        if pair is not None:
            r2[pair[0]], r2[pair[1]] = False, True
        agg = {"r2": r2, "Y2": st.Y.copy()}

    def step_aggressive() -> None:
        r2, Y2 = agg["r2"], agg["Y2"]
        sse1 = chain.sse()
        E2 = chain.maskf * (chain.Afill - _basis(chain.Afill, r2) @ Y2)
        lo = -(float(np.sum(E2 * E2)) - sse1) / (2.0 * st.sigma2)
        if rng.random() < expit(lo):
            st.Y = Y2.copy()
            chain.set_r(r2.copy())
        pair = chain.propose(st.r)
        r2 = st.r.copy()
        if pair is not None:
            r2[pair[0]], r2[pair[1]] = False, True
        Y_start = st.Y.copy()
        chain.sample_sigma2()
        chain.sweep_y()
        side = IdState(r2, Y_start, _basis(chain.Afill, r2), st.sigma2)
        side_chain = _IdChain(A, side, h, False, rng)
        side_chain.sweep_y()
        agg["r2"], agg["Y2"] = r2, side.Y

    def step(t: int) -> None:
        if variant == "GBT-aggressive":
            step_aggressive()
        elif ard:
            chain.ard_pass()
            chain.sample_sigma2()
            for _ in range(h.nu):
                chain.sweep_y()
        else:
            chain.swap(log_prior_fn)
            chain.sample_sigma2()
            chain.sweep_y()
        sizes.append(int(st.r.sum()))

    def snapshot() -> dict:
        return {"r": st.r.copy(), "Y": st.Y.copy(), "sigma2": st.sigma2}

    losses, samples = run_chain(cfg, step, snapshot, chain.mse)
    extras = {"J_size": np.array(sizes, dtype=np.int64)}
    if hier:
        extras.update(mu=st.mu.copy(), tau=st.tau.copy())
    return GibbsTrace(losses, samples, cfg, st, extras)


def fit_row_id(variant: Variant, A: MaskedMatrix, K: Optional[int] = None,
               h: Optional[IdHyper] = None, cfg: Optional[GibbsConfig] = None,
               init_J=None) -> GibbsTrace:
    """Row ID by running :func:`fit_id` on the transpose; selected indices are rows of ``A``."""
    return fit_id(variant, A.transpose(), K, h, cfg, init_J)
