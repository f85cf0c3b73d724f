"""Stochastic estimation of the KL gradient with respect to coreset weights.

The estimator centers per-datum log-likelihoods across an ensemble of K
parameter draws, then combines a weighted coreset column with a scaled
data-subsample column. Centering removes additive constants, so weights
that reproduce the full-data log-likelihood up to a constant are an exact
zero of the estimator.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from .models import GaussianLocationModel, Model
from .weights import FeasibleRegion

ROW_SUM_RTOL = 1e-9
PAIRWISE_SUM_MIN = 100_000


@dataclass
class CenteredLogLik:
    """Centered log-likelihood blocks for one ensemble of K parameter draws.

    ``coreset_block`` is M x K over the coreset indices, ``data_block`` is
    S x K over the subsample (S = N when no subsampling). Every row sums to
    zero across the K columns.
    """

    coreset_block: np.ndarray
    data_block: np.ndarray
    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("centering requires K >= 2 draws")
        for name, block in (("coreset", self.coreset_block), ("data", self.data_block)):
            if block.shape[1] != self.k:
                raise ValueError(f"{name} block has {block.shape[1]} columns, expected K={self.k}")
            scale = np.maximum(np.abs(block.max(axis=1, initial=0.0)),
                               np.abs(block.min(axis=1, initial=0.0)))
            if np.any(np.abs(block.sum(axis=1)) > ROW_SUM_RTOL * np.maximum(scale, 1.0) * self.k):
                raise ValueError(f"{name} block rows are not centered")


@dataclass
class GradientEstimate:
    g: np.ndarray
    s_used: int
    k_used: int
    seconds: float = 0.0


def plan_centering(coreset_indices, subsample_indices):
    """Shared-evaluation plan: unique indices plus positions of each block."""
    coreset_indices = np.asarray(coreset_indices, dtype=np.intp)
    subsample_indices = np.asarray(subsample_indices, dtype=np.intp)
    union, inverse = np.unique(
        np.concatenate([coreset_indices, subsample_indices]), return_inverse=True
    )
    m = coreset_indices.size
    data_pos = inverse[m:]
    if data_pos.size == union.size and np.array_equal(data_pos, np.arange(union.size)):
        data_pos = slice(None)  # subsample covers the union in order: no gather
    return union, inverse[:m], data_pos


def center_logliks(model: Model, coreset_indices, subsample_indices, thetas,
                   plan=None) -> CenteredLogLik:
    """Evaluate and center log-likelihoods for the coreset and the subsample.

    Overlapping indices are evaluated once and shared between the blocks; a
    precomputed ``plan`` skips the index bookkeeping when the subsample is
    fixed across iterations.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    k = thetas.shape[0]
    if k < 2:
        raise ValueError("need K >= 2 parameter draws")
    if plan is None:
        plan = plan_centering(coreset_indices, subsample_indices)
    union, coreset_pos, data_pos = plan
    block = model.log_lik_block(union, thetas)
    block -= block.mean(axis=1, keepdims=True)
    return CenteredLogLik(block[coreset_pos], block[data_pos], k)


def subsample_indices(n_obs: int, s: int, rng) -> np.ndarray:
    """S distinct indices drawn uniformly without replacement."""
    if not 1 <= s <= n_obs:
        raise ValueError(f"need 1 <= s <= n_obs, got s={s}, n_obs={n_obs}")
    rng = np.random.default_rng(rng)
    if s == n_obs:
        return np.arange(n_obs, dtype=np.intp)
    return rng.choice(n_obs, size=s, replace=False).astype(np.intp)


def _column_sums(block: np.ndarray) -> np.ndarray:
    # numpy's pairwise summation runs along the contiguous axis; transpose so
    # the long data axis is the one being compensated when S is large.
    if block.shape[0] >= PAIRWISE_SUM_MIN:
        return np.ascontiguousarray(block.T).sum(axis=1)
    return block.sum(axis=0)


def estimate_gradient(w, centered: CenteredLogLik, n_obs: int, s: int) -> GradientEstimate:
    """Unbiased KL-gradient estimate from centered blocks.

    g = (1/(K-1)) sum_k a_k (w . a_k - (N/S) sum_{i in subsample} b_ik)
    with a_k the k-th coreset column and b the data block.
    """
    t0 = time.perf_counter()
    w = np.asarray(w, dtype=np.float64)
    A = centered.coreset_block
    B = centered.data_block
    if w.shape[0] != A.shape[0]:
        raise ValueError("weight length does not match coreset block")
    if B.shape[0] != s:
        raise ValueError("data block row count does not match S")
    c = w @ A - (n_obs / s) * _column_sums(B)
    g = (A @ c) / (centered.k - 1)
    return GradientEstimate(g, s_used=s, k_used=centered.k, seconds=time.perf_counter() - t0)


def gram_matrix(centered: CenteredLogLik) -> np.ndarray:
    """Empirical second-moment matrix of the coreset columns, M x M PSD."""
    A = centered.coreset_block
    return (A @ A.T) / (centered.k - 1)


def subsampling_noise(centered: CenteredLogLik) -> float:
    """Scalar diagnostic of the variance injected by data subsampling.

    Requires the data block to cover the full dataset; always >= 0.
    """
    A = centered.coreset_block
    B = centered.data_block
    delta = B - B.mean(axis=0, keepdims=True)
    inner = (A @ delta.T) / (centered.k - 1)
    return float(np.mean(inner**2))


def exact_coreset_weights(
    model: GaussianLocationModel,
    indices,
    region: FeasibleRegion,
    residual_rtol: float = 1e-6,
) -> np.ndarray | None:
    """Weights reproducing the full-data likelihood exactly, if they exist.

    For the Gaussian location model an exact coreset solves Y w = sum_n X_n
    over the feasible region (zero KL additionally needs sum w = n on either
    region, so the nonneg branch augments that equation). Existence is
    decided by a linear feasibility program; when feasible, the returned
    point is the projection onto the exact-solution set of the uniform
    initialization (simplex region) or of the origin (nonneg region, the
    minimum-norm solution). Returns None when no exact coreset exists, i.e.
    the best feasible residual exceeds ``residual_rtol`` relative to the
    target norm.
    """
    if not isinstance(model, GaussianLocationModel):
        raise TypeError("exact coreset weights are defined for the Gaussian location model")
    indices = np.asarray(indices, dtype=np.intp)
    Y = model.dataset.features[indices].T  # d x M
    b = model.dataset.features.sum(axis=0)
    m = indices.size
    n = model.n
    total = region.total if region.kind == "simplex" else float(n)
    C = np.vstack([Y, np.ones((1, m))])
    rhs = np.concatenate([b, [total]])
    row_norms = np.linalg.norm(C, axis=1, keepdims=True)
    res = linprog(np.zeros(m), A_eq=C / row_norms, b_eq=rhs / row_norms.ravel(),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    start = np.zeros(m) if region.kind == "nonneg" else np.full(m, total / m)
    w = _project_onto_solutions(C, rhs, start, fallback=res.x)
    if np.linalg.norm(Y @ w - b) > residual_rtol * np.linalg.norm(b):
        return None
    return w


def _project_onto_solutions(C, rhs, start, fallback, iters=20000, tol=1e-14):
    """Dykstra's alternating projections onto {w >= 0 : C w = rhs}.

    Converges to the Euclidean projection of ``start`` onto the (nonempty)
    intersection; falls back to the supplied feasible point if the iteration
    stalls before reaching an exact solution.
    """
    pinv = np.linalg.pinv(C)
    def affine_proj(v):
        return v - pinv @ (C @ v - rhs)

    scale = max(1.0, np.abs(rhs).max())
    w = start.astype(np.float64).copy()
    p = np.zeros_like(w)
    q = np.zeros_like(w)
    for _ in range(iters):
        y = affine_proj(w + p)
        p = w + p - y
        w_new = np.maximum(y + q, 0.0)
        q = y + q - w_new
        done = np.max(np.abs(w_new - w)) < tol * scale
        w = w_new
        if done:
            break
    # land exactly on the affine set; clip any residual negative dust
    w = np.maximum(affine_proj(w), 0.0)
    if np.linalg.norm(C @ w - rhs) > np.linalg.norm(C @ fallback - rhs) + 1e-9 * scale:
        return fallback
    return w


def analytic_gradient(model: GaussianLocationModel, w, indices) -> np.ndarray:
    """Closed-form KL gradient for the Gaussian location model.

    Under the weighted posterior N(mu_w, sigma2 I), the covariance of two
    per-datum log-likelihoods is sigma2 (X_a - mu_w).(X_b - mu_w)
    + sigma2^2 d / 2; summing the covariances gives the gradient directly.
    """
    if not isinstance(model, GaussianLocationModel):
        raise TypeError("analytic gradient is defined for the Gaussian location model")
    w = np.asarray(w, dtype=np.float64)
    indices = np.asarray(indices, dtype=np.intp)
    post = model.exact_posterior(w, indices)
    sigma2 = post.sigma2
    d = model.dim
    Yc = model.dataset.features[indices] - post.mu_w  # M x d
    Xc_sum = model.dataset.features.sum(axis=0) - model.n * post.mu_w
    lin = sigma2 * (Yc @ (Yc.T @ w - Xc_sum))
    const = 0.5 * sigma2**2 * d * (w.sum() - model.n)
    return lin + const
