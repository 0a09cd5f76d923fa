"""Scalable Bayesian variable selection for multi-response linear regression.

Mean-field variational inference under spike-and-slab priors, with a shared
per-covariate activation proportion that corrects for multiplicity across many
covariates. Includes an enumeration-based reference oracle for small problems,
a genotype-style simulator, and permutation-based false discovery rate
calibration.
"""

__version__ = "0.1.0"

from .cavi import (FitConfig, FitResult, fit,
                   select_median_probability_model)
from .errors import DataError, NumericalError, VbqtlError
from .fdr import (Declarations, FdrCurve, PermutationRun,
                  adaptive_column_thresholds, declare_associations,
                  default_threshold_grid, empirical_fdr_curve,
                  permute_and_refit, threshold_for_fdr)
from .model import (Dataset, Hyperparameters, ModelSpec,
                    corrected_hyperparameters, prior_activation_probability,
                    prior_odds_ratio, standardize_inputs)
from .oracle import (MonteCarloSummary, OracleConfig, TightnessReport,
                     elbo_tightness, log_marginal_likelihood_mc,
                     log_marginal_response, mc_posterior_summary, omega_mean_mc,
                     ppi_mc)
from .sim import (Block, SimulatedData, SimulationSpec, generate_dataset,
                  nearest_positive_definite, simulate_genotypes)

__all__ = [
    "__version__",
    "VbqtlError", "DataError", "NumericalError",
    "Dataset", "Hyperparameters", "ModelSpec", "standardize_inputs",
    "corrected_hyperparameters", "prior_activation_probability",
    "prior_odds_ratio",
    "FitConfig", "FitResult", "fit", "select_median_probability_model",
    "OracleConfig", "MonteCarloSummary", "TightnessReport",
    "log_marginal_response", "mc_posterior_summary",
    "log_marginal_likelihood_mc", "ppi_mc", "omega_mean_mc", "elbo_tightness",
    "Block", "SimulationSpec", "SimulatedData", "simulate_genotypes",
    "generate_dataset", "nearest_positive_definite",
    "PermutationRun", "FdrCurve", "Declarations", "default_threshold_grid",
    "permute_and_refit", "empirical_fdr_curve", "threshold_for_fdr",
    "adaptive_column_thresholds", "declare_associations",
]
