"""Simulation study of Bayesian-regularized age-period-cohort models.

The package generates artificial age-period tables with known effects, fits
random effects (RE), ridge regression (RR) and random walk (RW) models by MAP
optimization or MCMC, and measures how far each fit's linear components drift
from the truth along the unidentified direction.
"""

from .errors import DataFormatError, InputDomainError
from .grid import (
    CenteringIndexes,
    GridSpec,
    centered_index,
    centering_indexes,
    cohort_index,
    index_weight_sum,
    weight_gap,
    weight_ratios,
)
from .datagen import (
    CASE_SIGNS,
    CaseSpec,
    Dataset,
    EffectSet,
    artificial_effects,
    enumerate_cases,
    expected_cell_means,
    generate_dataset,
    get_case,
    read_csv,
)
from .design import DesignMatrix, build_design, cell_means, cell_stats
from .models import (
    ModelKind,
    Posterior,
    UnconstrainedParams,
    grad_log_posterior,
    log_likelihood,
    log_posterior,
    log_prior,
    log_prior_decomposed,
    transform,
)
from .marginal import MarginalPosterior
from .inference import FitConfig, FitResult, fit, map_fit, mcmc_fit, rhat

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
