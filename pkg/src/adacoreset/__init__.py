"""Adaptive Bayesian coresets: interleaved MCMC and weight adaptation."""

from .estimator import CoresetMCMC
from .gradients import (CenteredLogLik, GradientEstimate, analytic_gradient,
                        center_logliks, estimate_gradient, exact_coreset_weights,
                        gram_matrix, subsample_indices, subsampling_noise)
from .kernels import (ChainEnsemble, CoordSlice, GaussianAR, HitAndRunSlice,
                      RandomWalkMH, ensemble_step, make_ensemble, make_kernel,
                      sample_direction, slice_step_1d)
from .metrics import (MetricsRecord, MomentSummary, bulk_ess, gaussian_location_kl,
                      heuristic_bound, min_ess_per_sec, relative_errors,
                      two_moment_kl)
from .models import (Dataset, GaussianLocationModel, GaussianLocationPosterior,
                     LinearRegressionModel, LogisticRegressionModel, Model,
                     PoissonRegressionModel, generate_synthetic, load_csv,
                     make_model, save_csv)
from .optimizers import AdamOptimizer, DivergenceError, Schedule, SGDOptimizer, make_optimizer
from .training import (TrainConfig, Trainer, TrainResult, cost_proxy,
                       sample_after_training, train)
from .weights import (CoresetState, FeasibleRegion, coreset_log_density, init_weights,
                      load_weights, nonneg_region, project, save_weights, select_points,
                      simplex_region)

__version__ = "0.1.0"

__all__ = [
    "AdamOptimizer", "CenteredLogLik", "ChainEnsemble", "CoordSlice", "CoresetMCMC",
    "CoresetState", "Dataset", "DivergenceError", "FeasibleRegion", "GaussianAR",
    "GaussianLocationModel", "GaussianLocationPosterior", "GradientEstimate",
    "HitAndRunSlice", "LinearRegressionModel", "LogisticRegressionModel",
    "MetricsRecord", "Model", "MomentSummary", "PoissonRegressionModel",
    "RandomWalkMH", "SGDOptimizer", "Schedule", "TrainConfig", "TrainResult",
    "Trainer", "analytic_gradient", "bulk_ess", "center_logliks",
    "coreset_log_density", "cost_proxy", "ensemble_step", "estimate_gradient",
    "exact_coreset_weights", "gaussian_location_kl", "generate_synthetic",
    "gram_matrix", "heuristic_bound", "init_weights", "load_csv", "load_weights",
    "make_ensemble", "make_kernel", "make_model", "make_optimizer",
    "min_ess_per_sec", "nonneg_region", "project", "relative_errors",
    "sample_after_training", "sample_direction", "save_csv", "save_weights",
    "select_points",
    "simplex_region", "slice_step_1d", "subsample_indices", "subsampling_noise",
    "train", "two_moment_kl",
]
