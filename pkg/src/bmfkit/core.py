"""Masked matrix container, losses and chain bookkeeping shared by all fitters."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .errors import DimensionError, EmptyMaskError, ParameterError


@dataclass
class MaskedMatrix:
    """Dense matrix plus a boolean observation mask.

    Parameters
    ----------
    values : array_like, shape (M, N)
        Entries. Values at unobserved positions are never read by masked
        arithmetic and may hold anything, NaN included.
    mask : array_like of bool, shape (M, N), optional
        ``True`` where the entry is observed. Defaults to all observed.
    """

    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=float)
        if self.values.ndim != 2:
            raise DimensionError(f"values must be 2-D, got ndim={self.values.ndim}")
        if self.mask is None:
            self.mask = np.ones(self.values.shape, dtype=bool)
        else:
            self.mask = np.array(self.mask, dtype=bool)
        if self.mask.shape != self.values.shape:
            raise DimensionError(
                f"mask shape {self.mask.shape} != values shape {self.values.shape}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Copy of ``values`` with unobserved entries replaced by ``fill``."""
        return np.where(self.mask, self.values, fill)

    def observed_mean(self) -> float:
        if self.n_observed == 0:
            raise EmptyMaskError("no observed entries")
        return float(self.values[self.mask].mean())

    def transpose(self) -> "MaskedMatrix":
        return MaskedMatrix(self.values.T.copy(), self.mask.T.copy())


@dataclass
class FactorState:
    """Factor matrices ``W`` (M x K), ``Z`` (K x N), optional ``F`` (K x L).

    ``sigma2`` is the Gaussian noise variance.
    """

    W: np.ndarray
    Z: np.ndarray
    sigma2: float = 1.0
    F: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.W = np.array(self.W, dtype=float)
        self.Z = np.array(self.Z, dtype=float)
        if self.W.ndim != 2 or self.Z.ndim != 2:
            raise DimensionError("W and Z must be 2-D")
        if self.F is not None:
            self.F = np.array(self.F, dtype=float)
            if self.F.shape != (self.W.shape[1], self.Z.shape[0]):
                raise DimensionError(
                    f"F shape {self.F.shape} does not conform with W {self.W.shape}"
                    f" and Z {self.Z.shape}"
                )
        elif self.W.shape[1] != self.Z.shape[0]:
            raise DimensionError(f"W {self.W.shape} and Z {self.Z.shape} do not conform")
        if self.W.shape[1] < 1:
            raise DimensionError("K must be at least 1")
        if not (self.sigma2 > 0):
            raise ParameterError(f"sigma2 must be positive, got {self.sigma2}")

    @property
    def K(self) -> int:
        return self.W.shape[1]

    def reconstruction(self) -> np.ndarray:
        if self.F is not None:
            return self.W @ self.F @ self.Z
        return self.W @ self.Z

    def copy(self) -> "FactorState":
        return FactorState(
            self.W.copy(),
            self.Z.copy(),
            float(self.sigma2),
            None if self.F is None else self.F.copy(),
        )


def _check_conform(A: MaskedMatrix, approx: np.ndarray) -> None:
    if approx.shape != A.shape:
        raise DimensionError(f"reconstruction shape {approx.shape} != data shape {A.shape}")


def masked_sse(A: MaskedMatrix, approx: np.ndarray) -> float:
    """Sum of squared residuals over observed entries."""
    approx = np.asarray(approx, dtype=float)
    _check_conform(A, approx)
    if A.n_observed == 0:
        raise EmptyMaskError("no observed entries")
    resid = np.where(A.mask, A.values - approx, 0.0)
    return float(np.sum(resid * resid))


def masked_mse_of(A: MaskedMatrix, approx: np.ndarray) -> float:
    """Mean squared residual over observed entries of ``A - approx``."""
    return masked_sse(A, approx) / A.n_observed


def masked_mse(A: MaskedMatrix, S: FactorState) -> float:
    """Mean squared error of ``S`` over the observed entries of ``A``."""
    return masked_mse_of(A, S.reconstruction())


def frobenius_loss(A: MaskedMatrix, S: FactorState) -> float:
    """Unnormalized squared Frobenius loss over the observed entries."""
    return masked_sse(A, S.reconstruction())


@dataclass
class GibbsConfig:
    """Chain length and sample retention.

    A sample is retained at iteration ``t`` (0-based) when ``t >= burn_in``
    and ``(t - burn_in) % thin == 0``.
    """

    iters: int = 500
    burn_in: int = 100
    thin: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.iters < 0:
            raise ParameterError("iters must be nonnegative")
        if self.burn_in < 0:
            raise ParameterError("burn_in must be nonnegative")
        if self.iters > 0 and self.burn_in >= self.iters:
            raise ParameterError("burn_in must be smaller than iters")
        if self.thin < 1:
            raise ParameterError("thin must be at least 1")

    def keep(self, t: int) -> bool:
        return t >= self.burn_in and (t - self.burn_in) % self.thin == 0

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass
class GibbsTrace:
    """Output of a Gibbs run.

    Attributes
    ----------
    losses : ndarray
        Masked MSE after every iteration.
    samples : list of dict
        Retained post-burn-in snapshots, keyed by variable name.
    config : GibbsConfig
    state : object
        Final chain state.
    extras : dict
        Model specific by-products (hyperparameter draws, selected sets, ...).
    """

    losses: np.ndarray
    samples: list[dict[str, Any]]
    config: GibbsConfig
    state: Any = None
    extras: dict[str, Any] = field(default_factory=dict)

    def posterior_mean(self, name: str) -> np.ndarray:
        if not self.samples:
            raise EmptyMaskError("no retained samples")
        return np.mean([s[name] for s in self.samples], axis=0)

    def post_burn_in_losses(self) -> np.ndarray:
        return self.losses[self.config.burn_in:]

    def mean_post_burn_in_loss(self) -> float:
        tail = self.post_burn_in_losses()
        if tail.size == 0:
            raise EmptyMaskError("no post burn-in iterations")
        return float(tail.mean())


def run_chain(cfg: GibbsConfig, step, snapshot, loss) -> tuple[np.ndarray, list[dict]]:
    """Drive a Gibbs chain.

    ``step(t)`` performs iteration ``t``; ``loss()`` returns the current MSE and
    ``snapshot()`` the dict retained when ``cfg.keep(t)``.
    """
    losses = np.empty(cfg.iters)
    samples = []
    for t in range(cfg.iters):
        step(t)
        losses[t] = loss()
        if cfg.keep(t):
            samples.append(snapshot())
    return losses, samples


class ResidualState:
    """Running masked residual ``E = mask * (A - W Z)`` for two-factor samplers.

    Column ``k`` of ``W`` (or row ``k`` of ``Z``) enters the likelihood through
    two sufficient statistics per entry: ``S`` (sum of squared partner values over
    observed cells) and ``L`` (partner-weighted residual with the entry's own
    contribution added back). ``W`` and ``Z`` are modified in place.
    """

    def __init__(self, A: MaskedMatrix, W: np.ndarray, Z: np.ndarray):
        self.X = A.filled()
        self.maskf = A.mask.astype(float)
        self.n_obs = A.n_observed
        self.W = W
        self.Z = Z
        self.refresh()

    def refresh(self) -> None:
        self.E = self.maskf * (self.X - self.W @ self.Z)

    def sse(self) -> float:
        return float(np.sum(self.E * self.E))

    def mse(self) -> float:
        return self.sse() / self.n_obs

    def w_stats(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        z = self.Z[k]
        S = self.maskf @ (z * z)
        L = self.E @ z + self.W[:, k] * S
        return S, L

    def z_stats(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        w = self.W[:, k]
        S = (w * w) @ self.maskf
        L = w @ self.E + self.Z[k] * S
        return S, L

    def set_w_col(self, k: int, new: np.ndarray) -> None:
        self.E -= self.maskf * np.outer(new - self.W[:, k], self.Z[k])
        self.W[:, k] = new

    def set_z_row(self, k: int, new: np.ndarray) -> None:
        self.E -= self.maskf * np.outer(self.W[:, k], new - self.Z[k])
        self.Z[k] = new

    def set_w_entry(self, m: int, k: int, value: float) -> None:
        self.E[m] -= self.maskf[m] * (value - self.W[m, k]) * self.Z[k]
        self.W[m, k] = value

    def set_w_row(self, m: int, new: np.ndarray) -> None:
        self.E[m] -= self.maskf[m] * ((new - self.W[m]) @ self.Z)
        self.W[m] = new

    def set_z_col(self, n: int, new: np.ndarray) -> None:
        self.E[:, n] -= self.maskf[:, n] * (self.W @ (new - self.Z[:, n]))
        self.Z[:, n] = new
