"""Treatment-effect estimation with missing outcomes and covariates."""

from .data import Dataset
from .estimators import (
    EstimateResult,
    EstimatorConfig,
    estimate,
    estimate_dr,
    estimate_unadj,
    estimate_xps,
    estimate_xreg,
    hajek_components,
)
from .missing import (
    AugmentedCovariates,
    PartialCovariates,
    augment_mim,
    subset_covariates,
    subset_labels,
)
from .simulation import (
    DgpSpec,
    McSummary,
    run_monte_carlo,
    sample_latent_class,
    sample_sinusoidal,
)
from .variance import (
    VarianceReport,
    bootstrap_variance,
    oracle_asymptotic_variance,
    sandwich_variance,
)

__version__ = "0.1.0"

__all__ = [
    "AugmentedCovariates",
    "Dataset",
    "DgpSpec",
    "EstimateResult",
    "EstimatorConfig",
    "McSummary",
    "PartialCovariates",
    "VarianceReport",
    "augment_mim",
    "bootstrap_variance",
    "estimate",
    "estimate_dr",
    "estimate_unadj",
    "estimate_xps",
    "estimate_xreg",
    "hajek_components",
    "oracle_asymptotic_variance",
    "run_monte_carlo",
    "sample_latent_class",
    "sample_sinusoidal",
    "sandwich_variance",
    "subset_covariates",
    "subset_labels",
]
