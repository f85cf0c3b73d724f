"""Scikit-learn style estimator facade over the training loop.

``CoresetMCMC`` follows the fit/get_params conventions so it clones and
composes like any other estimator; ``fit`` adapts the coreset weights on the
data and ``sample`` draws from the adapted approximate posterior.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .models import Dataset, make_model
from .training import TrainConfig, Trainer
from .validation import as_float_matrix, as_response_vector, check_kind


class CoresetMCMC(BaseEstimator):
    """Adaptive Bayesian coreset sampler.

    Fitting selects ``coreset_size`` observations, then interleaves Markov
    chain steps on the weighted posterior with stochastic updates of the
    weights toward the full-data posterior. After fitting, ``sample`` yields
    approximate posterior draws at full-dataset quality for coreset-size
    cost per Markov transition.

    Parameters
    ----------
    model : str
        One of "gaussian_location", "linear_reg", "logistic_reg",
        "poisson_reg".
    coreset_size : int
        Number of retained observations (M).
    n_iters : int
        Weight adaptation iterations; 0 reproduces the uniform-subsampling
        baseline.
    n_chains : int
        Parallel chains used by the gradient estimator (K >= 2).
    subsample_size : int or None
        Data subsample per gradient estimate; None uses the full dataset.
    step_size : float or None
        Base learning rate; None defaults to n_obs / (10 coreset_size).
    step_decay : float
        Exponent alpha of the (t+1)^(alpha-1) schedule.
    optimizer : str
        "adam" or "sgd".
    kernel : str
        "hit_and_run_slice", "coord_slice", "gaussian_ar", or "rwmh".
    kernel_params : dict or None
        Extra kernel arguments (e.g. {"beta": 0.8} for "gaussian_ar").
    region : str or None
        "simplex", "nonneg", or None for the model-specific default.
    burn_in : int
        Kernel-only sweeps before adaptation starts.
    stratify : bool
        Balance binary classes when selecting the coreset (logistic data).
    random_state : int
        Seed for the whole run.
    """

    def __init__(self, model="gaussian_location", coreset_size=30, n_iters=1000,
                 n_chains=2, subsample_size=None, step_size=None, step_decay=1.0,
                 optimizer="adam", kernel="hit_and_run_slice", kernel_params=None,
                 region=None, burn_in=100, metric_every=10, stratify=False,
                 random_state=0):
        self.model = model
        self.coreset_size = coreset_size
        self.n_iters = n_iters
        self.n_chains = n_chains
        self.subsample_size = subsample_size
        self.step_size = step_size
        self.step_decay = step_decay
        self.optimizer = optimizer
        self.kernel = kernel
        self.kernel_params = kernel_params
        self.region = region
        self.burn_in = burn_in
        self.metric_every = metric_every
        self.stratify = stratify
        self.random_state = random_state

    def _to_config(self) -> TrainConfig:
        kernel = {"kind": self.kernel}
        kernel.update(self.kernel_params or {})
        return TrainConfig(
            n_iters=self.n_iters,
            coreset_size=self.coreset_size,
            n_chains=self.n_chains,
            subsample_size=self.subsample_size,
            burn_in=self.burn_in,
            gamma0=self.step_size,
            alpha=self.step_decay,
            optimizer=self.optimizer,
            kernel=kernel,
            region=self.region,
            seed=self.random_state,
            stratify=self.stratify,
            metric_every=self.metric_every,
        )

    def fit(self, X, y=None):
        """Adapt coreset weights to the data; returns self."""
        check_kind(self.model)
        X = as_float_matrix(X)
        if self.model == "gaussian_location":
            dataset = Dataset(X, None)
        else:
            if y is None:
                raise ValueError(f"{self.model} requires responses y")
            y = as_response_vector(y, self.model, X.shape[0])
            dataset = Dataset(X, y)
        self.model_ = make_model(self.model, dataset)
        self.trainer_ = Trainer(self._to_config(), self.model_)
        self.result_ = self.trainer_.run()
        if self.result_.diverged:
            raise RuntimeError(f"training diverged: {self.result_.error}")
        self.coreset_indices_ = self.result_.state.indices
        self.coreset_weights_ = self.result_.state.w
        self.records_ = self.result_.records
        return self

    def _check_fitted(self):
        if not hasattr(self, "trainer_"):
            raise NotFittedError("this CoresetMCMC instance is not fitted yet")

    def sample(self, n_draws, thinning=1) -> np.ndarray:
        """Posterior draws from the adapted coreset, (n_draws, dim)."""
        self._check_fitted()
        draws, seconds = self.trainer_.sample(n_draws, thinning)
        self.sample_seconds_ = seconds
        return draws

    def log_density(self, theta) -> float:
        """Unnormalized weighted-posterior log-density at theta."""
        self._check_fitted()
        state = self.result_.state
        return self.model_.weighted_logpdf_fn(state.indices, state.w)(np.asarray(theta, float))
