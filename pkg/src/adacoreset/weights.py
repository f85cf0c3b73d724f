"""Coreset point selection, weight vectors, and feasible-region projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import Model

WEIGHT_FLOOR = -1e-12
SUM_RTOL = 1e-9


@dataclass(frozen=True)
class FeasibleRegion:
    """Constraint set for the weights: nonnegative orthant, optionally with a
    fixed sum (the scaled simplex)."""

    kind: str  # "nonneg" or "simplex"
    total: float | None = None

    def __post_init__(self):
        if self.kind not in ("nonneg", "simplex"):
            raise ValueError(f"unknown region kind {self.kind!r}")
        if self.kind == "simplex":
            if self.total is None or not self.total > 0:
                raise ValueError("simplex region requires a positive total")

    def contains(self, w) -> bool:
        w = np.asarray(w, dtype=np.float64)
        if np.any(w < WEIGHT_FLOOR):
            return False
        if self.kind == "simplex":
            return abs(w.sum() - self.total) <= SUM_RTOL * self.total
        return True


def nonneg_region() -> FeasibleRegion:
    return FeasibleRegion("nonneg")


def simplex_region(total: float) -> FeasibleRegion:
    return FeasibleRegion("simplex", float(total))


def project(w, region: FeasibleRegion) -> np.ndarray:
    """Euclidean projection onto the region.

    The simplex branch is the sort-and-threshold algorithm, O(M log M):
    find the largest k for which u_k stays above the running threshold
    (cumsum(u) - total)/k on the descending sort u, clip at that threshold.
    The threshold is applied in a frame anchored at the smallest support
    value so the output respects the sum constraint at the scale of the
    total even when the inputs are many orders of magnitude larger, and
    already-feasible vectors are returned unchanged (exact idempotence).
    """
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise ValueError("cannot project a non-finite vector")
    if region.kind == "nonneg":
        return np.maximum(w, 0.0)
    total = region.total
    if np.all(w >= 0.0):
        slack = 64.0 * np.finfo(np.float64).eps * max(total, float(np.abs(w).sum()))
        if abs(float(w.sum()) - total) <= slack:
            return w.copy()
    u = np.sort(w)[::-1]
    css = (np.cumsum(u) - total) / np.arange(1, w.size + 1)
    # ties (>=) occur when the threshold rounds onto u_k; the entry then
    # enters the support with weight ~0, which is the same projection
    k = np.nonzero(u >= css)[0][-1]
    anchor = u[k]
    shift = (float((u[: k + 1] - anchor).sum()) - total) / (k + 1)
    return np.maximum((w - anchor) - shift, 0.0)


def select_points(n_obs: int, m: int, rng, labels=None) -> np.ndarray:
    """Choose m distinct observation indices uniformly without replacement.

    Tie-breaking is a Fisher-Yates partial shuffle of the index order, so
    the result is deterministic for a given generator state. When binary
    ``labels`` are supplied and one class is rare, the selection follows the
    imbalance rule: take every minority point if m exceeds twice the minority
    count, otherwise split the coreset 50/50 between the classes.
    """
    rng = np.random.default_rng(rng)
    if not 1 <= m <= n_obs:
        raise ValueError(f"need 1 <= m <= n_obs, got m={m}, n_obs={n_obs}")
    if labels is None:
        return _partial_shuffle(np.arange(n_obs), m, rng)

    labels = np.asarray(labels)
    if labels.shape[0] != n_obs:
        raise ValueError("labels length must equal n_obs")
    classes, counts = np.unique(labels, return_counts=True)
    if classes.size != 2:
        return _partial_shuffle(np.arange(n_obs), m, rng)
    minority = classes[np.argmin(counts)]
    idx_min = np.nonzero(labels == minority)[0]
    idx_maj = np.nonzero(labels != minority)[0]
    if m > 2 * idx_min.size:
        picked_min = idx_min
        picked_maj = _partial_shuffle(idx_maj, m - idx_min.size, rng)
    else:
        n_min = m // 2
        picked_min = _partial_shuffle(idx_min, n_min, rng)
        picked_maj = _partial_shuffle(idx_maj, m - n_min, rng)
    return np.sort(np.concatenate([picked_min, picked_maj]))


def _partial_shuffle(pool: np.ndarray, m: int, rng) -> np.ndarray:
    pool = pool.copy()
    n = pool.size
    for i in range(m):
        j = i + int(rng.integers(n - i))
        pool[i], pool[j] = pool[j], pool[i]
    return pool[:m]


def init_weights(m: int, n_obs: int) -> np.ndarray:
    """Uniform initialization summing to the dataset size."""
    if m < 1:
        raise ValueError("m must be positive")
    return np.full(m, n_obs / m, dtype=np.float64)


@dataclass
class CoresetState:
    """Selected indices with their current weights and feasible region."""

    indices: np.ndarray
    w: np.ndarray
    region: FeasibleRegion

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.intp)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.indices.shape != self.w.shape:
            raise ValueError("indices and weights disagree on length")
        if np.unique(self.indices).size != self.indices.size:
            raise ValueError("coreset indices must be distinct")

    @property
    def m(self) -> int:
        return self.indices.size

    def validate(self) -> None:
        if not self.region.contains(self.w):
            raise ValueError("weights violate the feasible region")


def coreset_log_density(state: CoresetState, model: Model, theta) -> float:
    """Unnormalized log-density of the weighted posterior at theta."""
    theta = np.asarray(theta, dtype=np.float64)
    ll = model.log_lik_block(state.indices, theta[None, :])[:, 0]
    return float(state.w @ ll + model.log_prior(theta))


def save_weights(w, path) -> None:
    np.savetxt(path, np.asarray(w, dtype=np.float64).reshape(-1), fmt="%.17g")


def load_weights(path) -> np.ndarray:
    return np.loadtxt(path, dtype=np.float64).reshape(-1)
