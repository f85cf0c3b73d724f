"""Probabilistic models with black-box per-datum log-likelihoods.

Each model exposes ``log_prior`` and ``log_lik`` at a parameter point, plus
vectorized block evaluation across many observations and many parameter
vectors at once (the hot path for gradient estimation), and a fast closure
for the weighted coreset log-density used by the Markov kernels.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from .validation import as_float_matrix, as_response_vector, check_kind, check_parameter

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Dataset:
    """N observations: feature rows plus an optional response column.

    ``responses`` is None for the Gaussian location model, where the feature
    rows themselves are the observations. ``ground_truth`` records the
    parameter used by the synthetic generators.
    """

    features: np.ndarray
    responses: np.ndarray | None = None
    ground_truth: dict | None = field(default=None, repr=False)

    def __post_init__(self):
        self.features = as_float_matrix(self.features, "features")
        if self.responses is not None:
            self.responses = np.asarray(self.responses, dtype=np.float64).reshape(-1)
            if self.responses.shape[0] != self.features.shape[0]:
                raise ValueError("features and responses disagree on N")
            if not np.all(np.isfinite(self.responses)):
                raise ValueError("responses contain non-finite entries")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]


class Model:
    """Interface: log-prior plus per-datum log-likelihoods over a dataset."""

    kind: str
    dim: int

    def __init__(self, dataset: Dataset):
        self.dataset = dataset

    @property
    def n(self) -> int:
        return self.dataset.n

    def log_prior(self, theta) -> float:
        theta = check_parameter(theta, self.dim)
        return float(self._log_prior_block(theta[None, :])[0])

    def log_lik(self, n: int, theta) -> float:
        """Log-density of observation ``n`` (0-based) at ``theta``."""
        if not 0 <= n < self.n:
            raise IndexError(f"observation index {n} out of range [0, {self.n})")
        theta = check_parameter(theta, self.dim)
        return float(self.log_lik_block(np.array([n]), theta[None, :])[0, 0])

    def log_lik_block(self, indices, thetas) -> np.ndarray:
        """Matrix of log-likelihoods, shape (len(indices), len(thetas))."""
        raise NotImplementedError

    def log_prior_block(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        if thetas.shape[1] != self.dim:
            raise ValueError("parameter dimension mismatch")
        return self._log_prior_block(thetas)

    def _log_prior_block(self, thetas) -> np.ndarray:
        raise NotImplementedError

    def weighted_logpdf_fn(self, indices, w):
        """Closure theta -> sum_m w_m l_m(theta) + log prior, unnormalized."""
        indices = np.asarray(indices, dtype=np.intp)
        w = np.asarray(w, dtype=np.float64)

        def logpdf(theta):
            th = np.asarray(theta, dtype=np.float64)[None, :]
            return float(w @ self.log_lik_block(indices, th)[:, 0]
                         + self._log_prior_block(th)[0])

        return logpdf


class GaussianLocationModel(Model):
    """Isotropic normal observations with unknown mean and N(0, I) prior.

    The posterior under any nonnegative weighting of the observations is
    normal with closed-form moments, which makes this model the analytic
    test bed for everything downstream.
    """

    kind = "gaussian_location"

    def __init__(self, dataset: Dataset):
        super().__init__(dataset)
        self.dim = dataset.p
        self._row_sq = np.einsum("ij,ij->i", dataset.features, dataset.features)
        self._sum_x = dataset.features.sum(axis=0)

    def log_lik_block(self, indices, thetas):
        X = self.dataset.features[indices]
        thetas = np.atleast_2d(thetas)
        # x.theta - (|x|^2 + |theta|^2 + d log 2pi) / 2, built in place
        out = X @ thetas.T
        out -= 0.5 * (np.einsum("kj,kj->k", thetas, thetas)
                      + self.dim * LOG_2PI)[None, :]
        out -= 0.5 * self._row_sq[indices][:, None]
        return out

    def _log_prior_block(self, thetas):
        return -0.5 * np.einsum("kj,kj->k", thetas, thetas) - 0.5 * self.dim * LOG_2PI

    def exact_posterior(self, w, indices) -> "GaussianLocationPosterior":
        """Closed-form weighted posterior N(mu_w, sigma2 I)."""
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        Y = self.dataset.features[np.asarray(indices, dtype=np.intp)]
        sigma2 = 1.0 / (1.0 + w.sum())
        mu = sigma2 * (w @ Y)
        return GaussianLocationPosterior(mu_w=mu, sigma2=sigma2)

    def full_posterior(self) -> "GaussianLocationPosterior":
        sigma2 = 1.0 / (1.0 + self.n)
        return GaussianLocationPosterior(mu_w=sigma2 * self._sum_x, sigma2=sigma2)

    def weighted_logpdf_fn(self, indices, w):
        # O(dim) per evaluation: the weighted sum of squares collapses.
        indices = np.asarray(indices, dtype=np.intp)
        w = np.asarray(w, dtype=np.float64)
        Xc = self.dataset.features[indices]
        wsum = w.sum()
        v = w @ Xc
        c0 = w @ self._row_sq[indices]
        const = -0.5 * (wsum + 1.0) * self.dim * LOG_2PI - 0.5 * c0

        def logpdf(theta):
            theta = np.asarray(theta, dtype=np.float64)
            tt = theta @ theta
            return const + v @ theta - 0.5 * wsum * tt - 0.5 * tt

        return logpdf


@dataclass
class GaussianLocationPosterior:
    """Moments of the weighted posterior for the location model."""

    mu_w: np.ndarray
    sigma2: float

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    def sample(self, n_draws: int, rng: np.random.Generator) -> np.ndarray:
        d = self.mu_w.shape[0]
        return self.mu_w + math.sqrt(self.sigma2) * rng.standard_normal((n_draws, d))

    def logpdf(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        d = self.mu_w.shape[0]
        dev = theta - self.mu_w
        return float(-0.5 * (dev @ dev) / self.sigma2
                     - 0.5 * d * math.log(2.0 * math.pi * self.sigma2))


class _RegressionModel(Model):
    """Shared machinery for the GLM-style models: design matrix [1 x]."""

    def __init__(self, dataset: Dataset):
        if dataset.responses is None:
            raise ValueError(f"{self.kind} requires a response column")
        super().__init__(dataset)
        as_response_vector(dataset.responses, self.kind, dataset.n)
        self.design = np.column_stack([np.ones(dataset.n), dataset.features])

    def _linear_predictor(self, indices, betas):
        # betas: (n_coef, K)
        return self.design[indices] @ betas


class LinearRegressionModel(_RegressionModel):
    """Gaussian regression with unknown noise, parameter (beta, log sigma^2)."""

    kind = "linear_reg"

    def __init__(self, dataset: Dataset):
        super().__init__(dataset)
        self.dim = dataset.p + 2

    def log_lik_block(self, indices, thetas):
        thetas = np.atleast_2d(thetas)
        z = self._linear_predictor(indices, thetas[:, :-1].T)
        log_s2 = thetas[:, -1]
        resid = self.dataset.responses[indices][:, None] - z
        return -0.5 * (LOG_2PI + log_s2)[None, :] - 0.5 * resid**2 * np.exp(-log_s2)[None, :]

    def _log_prior_block(self, thetas):
        return -0.5 * np.einsum("kj,kj->k", thetas, thetas) - 0.5 * self.dim * LOG_2PI


class LogisticRegressionModel(_RegressionModel):
    """Bernoulli responses through a logit link; iid Cauchy(0, 1) prior."""

    kind = "logistic_reg"

    def __init__(self, dataset: Dataset):
        super().__init__(dataset)
        self.dim = dataset.p + 1

    def log_lik_block(self, indices, thetas):
        thetas = np.atleast_2d(thetas)
        z = self._linear_predictor(indices, thetas.T)
        sign = 2.0 * self.dataset.responses[indices] - 1.0
        return -np.logaddexp(0.0, -sign[:, None] * z)

    def _log_prior_block(self, thetas):
        return (-math.log(math.pi) - np.log1p(thetas**2)).sum(axis=1)


class PoissonRegressionModel(_RegressionModel):
    """Count responses with softplus rate; N(0, I) prior on coefficients."""

    kind = "poisson_reg"

    def __init__(self, dataset: Dataset):
        super().__init__(dataset)
        self.dim = dataset.p + 1
        self._log_y_fact = gammaln(dataset.responses + 1.0)

    def log_lik_block(self, indices, thetas):
        thetas = np.atleast_2d(thetas)
        z = self._linear_predictor(indices, thetas.T)
        rate = np.logaddexp(0.0, z)
        # log rate -> z when the softplus underflows (z very negative)
        with np.errstate(divide="ignore"):
            log_rate = np.where(rate > 0, np.log(np.maximum(rate, 1e-300)), z)
        y = self.dataset.responses[indices][:, None]
        return y * log_rate - rate - self._log_y_fact[indices][:, None]

    def _log_prior_block(self, thetas):
        return -0.5 * np.einsum("kj,kj->k", thetas, thetas) - 0.5 * self.dim * LOG_2PI


_MODEL_CLASSES = {
    "gaussian_location": GaussianLocationModel,
    "linear_reg": LinearRegressionModel,
    "logistic_reg": LogisticRegressionModel,
    "poisson_reg": PoissonRegressionModel,
}


def make_model(kind: str, dataset: Dataset) -> Model:
    return _MODEL_CLASSES[check_kind(kind)](dataset)


def generate_synthetic(kind: str, n_obs: int, p: int, seed: int) -> Dataset:
    """Draw a reproducible synthetic dataset for the given model kind.

    The ground-truth parameter is drawn N(0, I) and recorded under
    ``ground_truth`` so harnesses can emit it alongside the data.
    """
    check_kind(kind)
    if n_obs < 1 or p < 1:
        raise ValueError("n_obs and p must be positive")
    rng = np.random.default_rng(seed)
    if kind == "gaussian_location":
        theta_star = rng.standard_normal(p)
        X = theta_star + rng.standard_normal((n_obs, p))
        return Dataset(X, None, {"kind": kind, "theta_star": theta_star.tolist()})

    X = rng.standard_normal((n_obs, p))
    design = np.column_stack([np.ones(n_obs), X])
    if kind == "linear_reg":
        beta = rng.standard_normal(p + 1)
        log_s2 = float(rng.standard_normal())
        y = design @ beta + math.exp(0.5 * log_s2) * rng.standard_normal(n_obs)
        truth = {"kind": kind, "beta": beta.tolist(), "log_sigma2": log_s2}
    elif kind == "logistic_reg":
        beta = rng.standard_normal(p + 1)
        prob = 1.0 / (1.0 + np.exp(-(design @ beta)))
        y = (rng.random(n_obs) < prob).astype(np.float64)
        truth = {"kind": kind, "beta": beta.tolist()}
    else:  # poisson_reg
        beta = rng.standard_normal(p + 1)
        rate = np.logaddexp(0.0, design @ beta)
        y = rng.poisson(rate).astype(np.float64)
        truth = {"kind": kind, "beta": beta.tolist()}
    return Dataset(X, y, truth)


def load_csv(path, kind: str = "linear_reg") -> Dataset:
    """Read a dataset from a comma-separated UTF-8 file with a header row.

    The response column must be named ``y``; every other column is a numeric
    feature. The Gaussian location kind takes feature-only files. Non-finite
    cells are rejected.
    """
    check_kind(kind)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = [row for row in reader if row]

    if "y" in header:
        y_col = header.index("y")
        if kind == "gaussian_location":
            raise ValueError("gaussian_location data must not contain a y column")
    else:
        y_col = None
        if kind != "gaussian_location":
            raise ValueError(f"{path}: missing response column 'y'")

    n_cols = len(header)
    feats, resps = [], []
    for i, row in enumerate(rows):
        if len(row) != n_cols:
            raise ValueError(f"{path}: row {i + 2} has {len(row)} cells, expected {n_cols}")
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise ValueError(f"{path}: row {i + 2}: {exc}") from None
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"{path}: row {i + 2} contains a non-finite value")
        if y_col is None:
            feats.append(vals)
        else:
            resps.append(vals[y_col])
            feats.append([v for j, v in enumerate(vals) if j != y_col])

    if not feats:
        raise ValueError(f"{path}: no data rows")
    X = np.array(feats, dtype=np.float64)
    if y_col is None:
        return Dataset(X, None)
    y = as_response_vector(np.array(resps), kind, X.shape[0])
    return Dataset(X, y)


def save_csv(dataset: Dataset, path) -> None:
    """Write a dataset in the canonical format understood by ``load_csv``.

    Values use repr-level precision so a round trip reproduces the array
    bit for bit.
    """
    p = dataset.p
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        cols = [f"x{j}" for j in range(p)]
        if dataset.responses is not None:
            cols.append("y")
        writer.writerow(cols)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            if dataset.responses is not None:
                row.append(repr(float(dataset.responses[i])))
            writer.writerow(row)
