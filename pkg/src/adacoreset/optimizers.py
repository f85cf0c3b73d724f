"""Learning-rate schedules and projected stochastic weight optimizers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .weights import FeasibleRegion, project

DIVERGENCE_LIMIT = 1e12


class DivergenceError(RuntimeError):
    """Raised when a weight update produces non-finite or runaway iterates."""


@dataclass(frozen=True)
class Schedule:
    """Polynomially decaying step size gamma0 * (t+1)^(alpha-1).

    alpha = 1 gives a constant rate; alpha = 0.5 the usual 1/sqrt(t) decay.
    """

    gamma0: float
    alpha: float = 1.0

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValueError("gamma0 must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")

    def rate(self, t: int) -> float:
        if t < 0:
            raise ValueError("iteration must be nonnegative")
        return self.gamma0 * (t + 1) ** (self.alpha - 1.0)


def _checked(g) -> np.ndarray:
    g = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradient estimate")
    return g


def _guard(w) -> np.ndarray:
    if np.max(np.abs(w), initial=0.0) > DIVERGENCE_LIMIT:
        raise DivergenceError("weight iterate exceeded the divergence guard")
    return w


@dataclass
class SGDOptimizer:
    """Projected stochastic gradient descent."""

    schedule: Schedule
    t: int = 0

    def step(self, w, g, region: FeasibleRegion) -> np.ndarray:
        g = _checked(g)
        w = project(np.asarray(w, dtype=np.float64) - self.schedule.rate(self.t) * g, region)
        self.t += 1
        return _guard(w)


@dataclass
class AdamOptimizer:
    """Bias-corrected adaptive moments with projection applied to the iterate."""

    schedule: Schedule
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def step(self, w, g, region: FeasibleRegion) -> np.ndarray:
        g = _checked(g)
        w = np.asarray(w, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(w)
            self.v = np.zeros_like(w)
        rate = self.schedule.rate(self.t)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        w = project(w - rate * m_hat / (np.sqrt(v_hat) + self.eps), region)
        return _guard(w)


def make_optimizer(kind: str, schedule: Schedule, **kwargs):
    if kind == "sgd":
        return SGDOptimizer(schedule)
    if kind == "adam":
        return AdamOptimizer(schedule, **kwargs)
    raise ValueError(f"unknown optimizer kind {kind!r}")
