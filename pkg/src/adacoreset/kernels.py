"""Markov kernel families leaving the weighted coreset posterior invariant.

The workhorses are slice samplers with interval doubling, which adapt their
step size automatically as the weights (and hence the target) change. The
Gaussian location model additionally gets an exact autoregressive kernel
whose mixing speed is controlled by a single parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import GaussianLocationModel, Model
from .weights import CoresetState


class KernelError(RuntimeError):
    """Raised when a kernel step cannot proceed (e.g. non-finite target)."""


def slice_step_1d(logdensity, x0, width, max_doublings, rng, log_y=None, log_f0=None):
    """One univariate slice-sampling transition with interval doubling.

    Draws the slice level at ``logdensity(x0) - Exponential(1)`` unless
    ``log_y`` is supplied, places an interval of size ``width`` uniformly
    around ``x0``, doubles a randomly chosen side until both endpoints fall
    below the slice (or the doubling budget is spent), then shrinkage-samples
    a point, applying the doubling acceptance test before accepting. The
    returned point always satisfies ``logdensity(x1) >= log_y``.
    """
    x1, _ = _slice_1d(logdensity, x0, width, max_doublings, rng, log_y, log_f0, None)
    return x1


def _slice_1d(logdensity, x0, width, max_doublings, rng, log_y, log_f0, stats):
    if log_f0 is None:
        log_f0 = logdensity(x0)
    if not math.isfinite(log_f0):
        raise KernelError("log-density is not finite at the current state")
    if log_y is None:
        log_y = log_f0 - rng.exponential()

    # Doubling (the interval grows by a factor of two on a random side).
    L = x0 - width * rng.random()
    R = L + width
    fL = logdensity(L)
    fR = logdensity(R)
    remaining = max_doublings
    while remaining > 0 and (log_y < fL or log_y < fR):
        if rng.random() < 0.5:
            L -= R - L
            fL = logdensity(L)
        else:
            R += R - L
            fR = logdensity(R)
        remaining -= 1
    if remaining == 0 and (log_y < fL or log_y < fR) and stats is not None:
        stats["doubling_exhausted"] = stats.get("doubling_exhausted", 0) + 1

    # Shrinkage with the acceptance test required after doubling.
    lo, hi = L, R
    while True:
        x1 = lo + (hi - lo) * rng.random()
        f1 = logdensity(x1)
        if f1 >= log_y and _doubling_acceptable(logdensity, x0, x1, log_y, width, L, R):
            assert f1 >= log_y  # returned point never falls below its slice
            return x1, f1
        if x1 < x0:
            lo = x1
        else:
            hi = x1
        if not hi - lo > abs(x0) * 1e-15 + 1e-300:
            # Interval collapsed onto x0; x0 itself satisfies the slice.
            return x0, log_f0


def _doubling_acceptable(logdensity, x0, x1, log_y, width, L, R):
    """Neal's test that x1 could have generated the doubled interval."""
    lo, hi = L, R
    differ = False
    while hi - lo > 1.1 * width:
        mid = 0.5 * (lo + hi)
        if (x0 < mid) != (x1 < mid):
            differ = True
        if x1 < mid:
            hi = mid
        else:
            lo = mid
        if differ and log_y >= logdensity(lo) and log_y >= logdensity(hi):
            return False
    return True


def sample_direction(dim, rng):
    """Uniform direction on the unit sphere via normalized Gaussians."""
    while True:
        u = rng.standard_normal(dim)
        norm = math.sqrt(u @ u)
        if norm > 0.0:
            return u / norm


class _KernelBase:
    def prepare(self, state: CoresetState, model: Model):
        return model.weighted_logpdf_fn(state.indices, state.w)

    def step(self, state: CoresetState, model: Model, theta, rng):
        """One transition targeting the weighted posterior at the given state."""
        return self.step_from(self.prepare(state, model), np.asarray(theta, float), rng)

    def step_from(self, ctx, theta, rng):
        raise NotImplementedError


@dataclass
class HitAndRunSlice(_KernelBase):
    """Slice sampling along a uniformly random direction through the point."""

    init_width: float = 2.0
    max_doublings: int = 10
    stats: dict = field(default_factory=dict, repr=False)

    def step_from(self, logpdf, theta, rng):
        u = sample_direction(theta.shape[0], rng)

        def line(s):
            return logpdf(theta + s * u)

        s1, _ = _slice_1d(line, 0.0, self.init_width, self.max_doublings, rng,
                          None, None, self.stats)
        return theta + s1 * u


@dataclass
class CoordSlice(_KernelBase):
    """Univariate slice sampling with doubling applied to each coordinate."""

    init_width: float = 2.0
    max_doublings: int = 10
    stats: dict = field(default_factory=dict, repr=False)

    def step_from(self, logpdf, theta, rng):
        x = np.array(theta, dtype=np.float64)
        f_cur = None
        for j in range(x.shape[0]):
            def line(s, j=j):
                old = x[j]
                x[j] = s
                val = logpdf(x)
                x[j] = old
                return val

            x[j], f_cur = _slice_1d(line, x[j], self.init_width, self.max_doublings,
                                    rng, None, f_cur, self.stats)
        return x


@dataclass
class GaussianAR(_KernelBase):
    """Exact autoregressive kernel for the Gaussian location model.

    Interpolates between independent draws (beta = 0) and no movement at all
    (beta = 1) while leaving the weighted posterior invariant for any beta.
    """

    beta: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")

    def prepare(self, state: CoresetState, model: Model):
        if not isinstance(model, GaussianLocationModel):
            raise KernelError("the autoregressive kernel requires the Gaussian location model")
        post = model.exact_posterior(state.w, state.indices)
        return post.mu_w, math.sqrt(post.sigma2)

    def step_from(self, ctx, theta, rng):
        if self.beta == 1.0:
            return np.array(theta, dtype=np.float64)
        mu, sigma = ctx
        z = rng.standard_normal(theta.shape[0])
        return mu + math.sqrt(self.beta) * (theta - mu) + math.sqrt(1.0 - self.beta) * sigma * z


@dataclass
class RandomWalkMH(_KernelBase):
    """Spherical Gaussian random-walk Metropolis; plumbing for odd targets."""

    proposal_scale: float = 0.5

    def step_from(self, logpdf, theta, rng):
        f0 = logpdf(theta)
        if not math.isfinite(f0):
            raise KernelError("log-density is not finite at the current state")
        prop = theta + self.proposal_scale * rng.standard_normal(theta.shape[0])
        if math.log(rng.random()) < logpdf(prop) - f0:
            return prop
        return np.array(theta, dtype=np.float64)


KERNEL_KINDS = {
    "hit_and_run_slice": HitAndRunSlice,
    "coord_slice": CoordSlice,
    "gaussian_ar": GaussianAR,
    "rwmh": RandomWalkMH,
}


def make_kernel(kind: str, **params):
    try:
        cls = KERNEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown kernel kind {kind!r}") from None
    return cls(**params)


@dataclass
class ChainEnsemble:
    """K parameter states with one independent random stream per chain."""

    states: np.ndarray
    rngs: list

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=np.float64))
        if self.states.shape[0] < 2:
            raise ValueError("the gradient estimator needs K >= 2 chains")
        if len(self.rngs) != self.states.shape[0]:
            raise ValueError("one random stream per chain is required")

    @property
    def k(self) -> int:
        return self.states.shape[0]


def make_ensemble(k: int, dim: int, seed_seq: np.random.SeedSequence) -> ChainEnsemble:
    """Standard-normal chain states, streams spawned from one seed sequence."""
    children = seed_seq.spawn(k + 1)
    init_rng = np.random.default_rng(children[0])
    rngs = [np.random.default_rng(c) for c in children[1:]]
    return ChainEnsemble(init_rng.standard_normal((k, dim)), rngs)


def ensemble_step(kernel, state: CoresetState, model: Model,
                  ensemble: ChainEnsemble, order=None) -> ChainEnsemble:
    """Advance every chain one step; the result does not depend on order.

    Chains are mutually independent given the current weights, each driven by
    its own stream, so any execution order (or interleaving) produces the
    same ensemble.
    """
    ctx = kernel.prepare(state, model)
    new_states = ensemble.states.copy()
    for k in range(ensemble.k) if order is None else order:
        try:
            new_states[k] = kernel.step_from(ctx, ensemble.states[k], ensemble.rngs[k])
        except KernelError as exc:
            raise KernelError(f"chain {k}: {exc}") from exc
    return ChainEnsemble(new_states, ensemble.rngs)
