"""Bayesian matrix factorization: Gibbs samplers, baselines and interpolative decomposition."""

from .core import (
    FactorState,
    GibbsConfig,
    GibbsTrace,
    MaskedMatrix,
    frobenius_loss,
    masked_mse,
    masked_mse_of,
)
from .baselines import AlsConfig, NmfConfig, als_fit, nmf_mu_fit
from .gibbs_rmf import RmfHyper, fit_rmf
from .gibbs_nmf import NMF_MODELS, NmfHyper, fit_nmf
from .gibbs_discrete import (
    OggwHyper,
    OrdinalSpec,
    PoissonHyper,
    fit_oggw,
    fit_paa,
    fit_paaa,
)
from .interpolative import IdHyper, IdState, exact_column_id, fit_id, post_process
from .metrics import cosine_sim, pearson_sim, pr_curve, rank_ic, rmse

__version__ = "0.1.0"

__all__ = [
    "FactorState", "GibbsConfig", "GibbsTrace", "MaskedMatrix", "frobenius_loss", "masked_mse",
    "masked_mse_of", "AlsConfig", "NmfConfig", "als_fit", "nmf_mu_fit", "RmfHyper", "fit_rmf",
    "NMF_MODELS", "NmfHyper", "fit_nmf", "OggwHyper", "OrdinalSpec", "PoissonHyper", "fit_oggw",
    "fit_paa", "fit_paaa", "IdHyper", "IdState", "exact_column_id", "fit_id", "post_process",
    "cosine_sim", "pearson_sim", "pr_curve", "rank_ic", "rmse",
]
