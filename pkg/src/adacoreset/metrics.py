"""Posterior-quality and sampling-efficiency metrics.

Includes the closed-form KL for the Gaussian location model, the two-moment
(Gaussian-fit) KL, rank-normalized split-chain bulk effective sample size,
relative moment errors, and a closed-form evaluator for the expected-KL
decay heuristic.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

from .models import GaussianLocationModel
from .weights import CoresetState

COV_REG_SCALE = 1e-10


@dataclass
class MomentSummary:
    """Sample mean and covariance of a set of draws."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        self.cov = np.atleast_2d(np.asarray(self.cov, dtype=np.float64))
        d = self.mean.shape[0]
        if self.cov.shape != (d, d):
            raise ValueError("covariance shape does not match the mean")
        if not np.allclose(self.cov, self.cov.T, atol=1e-12 * max(1.0, np.abs(self.cov).max())):
            raise ValueError("covariance must be symmetric")

    @classmethod
    def from_draws(cls, draws) -> "MomentSummary":
        draws = np.atleast_2d(np.asarray(draws, dtype=np.float64))
        cov = np.cov(draws, rowvar=False, ddof=1).reshape(draws.shape[1], draws.shape[1])
        return cls(draws.mean(axis=0), 0.5 * (cov + cov.T), draws.shape[0])

    @classmethod
    def isotropic(cls, mean, variance: float, n: int = 0) -> "MomentSummary":
        mean = np.asarray(mean, dtype=np.float64).reshape(-1)
        return cls(mean, variance * np.eye(mean.shape[0]), n)


def gaussian_location_kl(state: CoresetState, model: GaussianLocationModel) -> float:
    """Exact KL from the weighted posterior to the full-data posterior.

    On the fixed-sum region this collapses to ||Y w - X 1||^2 / (2 (1 + N));
    for general nonnegative weights the full three-term Gaussian KL is used.
    """
    w = state.w
    n = model.n
    Y = model.dataset.features[state.indices]
    resid = w @ Y - model.dataset.features.sum(axis=0)
    wsum = w.sum()
    if abs(wsum - n) <= 1e-6 * n:
        return float(resid @ resid) / (2.0 * (1.0 + n))
    d = model.dim
    r = (1.0 + wsum) / (1.0 + n)
    mu_w = (w @ Y) / (1.0 + wsum)
    mu = model.dataset.features.sum(axis=0) / (1.0 + n)
    dev = mu_w - mu
    return 0.5 * (d * math.log(r) - d + d / r + (1.0 + n) * float(dev @ dev))


def two_moment_kl(hat: MomentSummary, ref: MomentSummary) -> float:
    """KL between Gaussians fitted to approximate and reference draws."""
    d = ref.mean.shape[0]
    if hat.mean.shape[0] != d:
        raise ValueError("dimension mismatch between summaries")
    cov_ref = ref.cov
    try:
        chol = np.linalg.cholesky(cov_ref)
    except np.linalg.LinAlgError:
        reg = COV_REG_SCALE * np.trace(cov_ref) / d
        warnings.warn(f"reference covariance regularized by {reg:g} I", RuntimeWarning)
        cov_ref = cov_ref + reg * np.eye(d)
        try:
            chol = np.linalg.cholesky(cov_ref)
        except np.linalg.LinAlgError:
            raise ValueError("reference covariance is singular after regularization") from None
    solve = lambda B: np.linalg.solve(chol.T, np.linalg.solve(chol, B))
    trace_term = np.trace(solve(hat.cov))
    dev = ref.mean - hat.mean
    quad = float(dev @ solve(dev))
    logdet_ref = 2.0 * np.log(np.diag(chol)).sum()
    sign, logdet_hat = np.linalg.slogdet(hat.cov)
    if sign <= 0:
        return math.inf
    return 0.5 * (trace_term - d + quad + logdet_ref - logdet_hat)


def relative_errors(hat: MomentSummary, ref: MomentSummary) -> tuple[float, float]:
    """Relative mean error (2-norm) and relative covariance error (Frobenius)."""
    mean_norm = np.linalg.norm(ref.mean)
    cov_norm = np.linalg.norm(ref.cov, "fro")
    if mean_norm == 0.0 or cov_norm == 0.0:
        raise ValueError("reference moments must have nonzero norm")
    return (
        float(np.linalg.norm(ref.mean - hat.mean) / mean_norm),
        float(np.linalg.norm(ref.cov - hat.cov, "fro") / cov_norm),
    )


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    ranks = rankdata(x, method="average").reshape(x.shape)
    return ndtri((ranks - 0.375) / (x.size + 0.25))


def _split_chains(x: np.ndarray) -> np.ndarray:
    half = x.shape[1] // 2
    return np.vstack([x[:, :half], x[:, -half:]])


def _autocovariance(x: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=1)[:, :n]
    return acov / n


def bulk_ess(chains) -> float:
    """Rank-normalized split-chain bulk effective sample size.

    Chains are split in half, pooled draws are mapped through fractional
    ranks to normal scores, and the integrated autocorrelation time is
    estimated with chain-averaged autocorrelations truncated by the initial
    monotone positive-pair rule. The result is capped at the total draw
    count.
    """
    x = np.asarray(chains, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("chains must be a (n_chains, n_draws) array")
    if x.shape[1] < 8:
        raise ValueError("need at least 8 draws per chain")
    n_total = x.size
    if np.max(x) - np.min(x) == 0.0:
        warnings.warn("constant chains: effective sample size set to the draw count",
                      RuntimeWarning)
        return float(n_total)
    z = _rank_normalize(_split_chains(x))
    m, n = z.shape

    acov = _autocovariance(z)
    chain_means = z.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += chain_means.var(ddof=1)

    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0.0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0.0:
        rho[max_t + 1] = rho_even
    # enforce monotonicity of successive pair sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    tau = -1.0 + 2.0 * rho[: max_t + 1].sum() + rho[max_t + 1]
    tau = max(tau, 1.0 / math.log10(n_total))
    return float(min(n_total / tau, n_total))


def min_ess_per_sec(draws, sampling_seconds: float) -> float:
    """Minimum marginal bulk ESS across parameter coordinates, per second."""
    if not sampling_seconds > 0:
        raise ValueError("sampling_seconds must be positive")
    draws = np.asarray(draws, dtype=np.float64)
    if draws.ndim == 2:
        draws = draws[None, ...]  # one chain: (1, n, d)
    ess = min(bulk_ess(draws[:, :, j]) for j in range(draws.shape[2]))
    return ess / sampling_seconds


def heuristic_bound(t, alpha, c, n_obs, m, s, k, d) -> float:
    """Closed-form evaluation of the expected-KL decay heuristic.

    ``c`` is the dimensionless rate constant (base rate times M / N); the
    first term is the geometric bias decay, the second the subsampling noise
    floor, zero when s = n_obs.
    """
    if t < 1 or k < 2 or not 1 <= s <= n_obs or not 0 < alpha <= 1:
        raise ValueError("invalid heuristic-bound arguments")
    bias = math.exp(-2.0 * c * (t**alpha - 1.0) / alpha) * n_obs / (2.0 * m)
    noise = (c * (n_obs - s) * d * (k + d) * (1.0 + (1.0 - alpha) * math.log(t))
             / (4.0 * s * (k - 1) * t ** (1.0 - alpha)))
    return bias + noise


@dataclass
class MetricsRecord:
    """One evaluation point of a run; wall-clock fields are marked wall_*."""

    iteration: int
    cost: float
    exact_kl: float | None = None
    two_moment_kl: float | None = None
    min_ess_per_sec: float | None = None
    rel_mean_err: float | None = None
    rel_cov_err: float | None = None
    wall_train_seconds: float | None = None
    wall_sample_seconds: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if v is not None and k != "extra"}
        # ESS per second is wall-clock derived, so mark it as a timing column.
        if "min_ess_per_sec" in payload:
            payload["wall_min_ess_per_sec"] = payload.pop("min_ess_per_sec")
        payload.update(self.extra)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        data = json.loads(line)
        if "wall_min_ess_per_sec" in data:
            data["min_ess_per_sec"] = data.pop("wall_min_ess_per_sec")
        known = {f for f in cls.__dataclass_fields__ if f != "extra"}
        kwargs = {k: v for k, v in data.items() if k in known}
        extra = {k: v for k, v in data.items() if k not in known}
        return cls(**kwargs, extra=extra)


WALL_PREFIX = "wall_"


def strip_wall_fields(json_line: str) -> str:
    """Canonical form of a record line with timing fields removed."""
    data = json.loads(json_line)
    return json.dumps({k: v for k, v in data.items() if not k.startswith(WALL_PREFIX)},
                      sort_keys=True)
