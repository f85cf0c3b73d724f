"""Outer training loop: subsample, gradient step, chain step, repeat.

Each iteration draws a fresh without-replacement subsample, estimates the
KL gradient from the current chain states, applies one projected optimizer
step to the weights, and then advances every chain with the kernel at the
new weights. All randomness flows from one seed through named child
streams, so runs are reproducible bit for bit and can be checkpointed and
resumed exactly.
"""

from __future__ import annotations

import math
import pickle
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import gradients, kernels, weights
from .metrics import MetricsRecord, gaussian_location_kl
from .models import GaussianLocationModel, Model
from .optimizers import DivergenceError, Schedule, make_optimizer
from .weights import CoresetState, FeasibleRegion


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    ``subsample_size`` of None means full-data gradients. ``gamma0`` of None
    defaults to n_obs / (10 m). ``region`` of None picks the fixed-sum
    simplex for the Gaussian location model and the nonnegative orthant
    otherwise.
    """

    n_iters: int
    coreset_size: int
    n_chains: int = 2
    subsample_size: int | None = None
    burn_in: int = 100
    gamma0: float | None = None
    alpha: float = 1.0
    optimizer: str = "adam"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    kernel: dict = field(default_factory=lambda: {"kind": "hit_and_run_slice"})
    region: str | None = None
    seed: int = 0
    stratify: bool = False
    kernel_steps_per_iter: int = 1
    store_stride: int | None = None
    metric_every: int = 10

    def __post_init__(self):
        if self.n_iters < 0:
            raise ValueError("n_iters must be nonnegative")
        if self.n_chains < 2:
            raise ValueError("the gradient estimator needs at least 2 chains")
        if self.coreset_size < 1:
            raise ValueError("coreset_size must be positive")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")


def cost_proxy(config: TrainConfig, t: int, n_obs: int | None = None) -> float:
    """Complexity model (M + S) log(K) t used as the cost axis of plots."""
    s = config.subsample_size
    if s is None:
        if n_obs is None:
            raise ValueError("full-data cost needs n_obs")
        s = n_obs
    return (config.coreset_size + s) * math.log(config.n_chains) * t


@dataclass
class TrainResult:
    state: CoresetState
    trajectory: np.ndarray
    trajectory_iters: np.ndarray
    records: list
    diverged: bool = False
    error: str | None = None
    diagnostics: dict = field(default_factory=dict)


class Trainer:
    """Owns the mutable training state; supports exact checkpoint/resume."""

    def __init__(self, config: TrainConfig, model: Model):
        self.config = config
        self.model = model
        n = model.n
        if config.coreset_size > n:
            raise ValueError("coreset_size cannot exceed the dataset size")
        s = config.subsample_size
        if s is not None and not 1 <= s <= n:
            raise ValueError("subsample_size must lie in [1, n_obs]")

        root = np.random.SeedSequence(config.seed)
        seq_select, seq_chains, seq_subsample, seq_sample = root.spawn(4)
        labels = model.dataset.responses if config.stratify else None
        indices = weights.select_points(
            n, config.coreset_size, np.random.default_rng(seq_select), labels
        )
        region = self._make_region(config.region, model, n)
        self.state = CoresetState(indices, weights.init_weights(config.coreset_size, n), region)
        self.kernel = kernels.make_kernel(**config.kernel)
        gamma0 = config.gamma0 if config.gamma0 is not None else n / (10.0 * config.coreset_size)
        schedule = Schedule(gamma0, config.alpha)
        opt_kwargs = {}
        if config.optimizer == "adam":
            opt_kwargs = dict(beta1=config.adam_beta1, beta2=config.adam_beta2,
                              eps=config.adam_eps)
        self.optimizer = make_optimizer(config.optimizer, schedule, **opt_kwargs)
        self.ensemble = kernels.make_ensemble(config.n_chains, model.dim, seq_chains)
        self.subsample_rng = np.random.default_rng(seq_subsample)
        self.sample_rng = np.random.default_rng(seq_sample)

        self.iteration = 0
        self.burned_in = False
        self.kernel_steps = 0
        self.train_seconds = 0.0
        stride = config.store_stride
        self.store_stride = stride if stride is not None else max(1, config.n_iters // 1000)
        self.trajectory = [self.state.w.copy()]
        self.trajectory_iters = [0]
        self.records: list[MetricsRecord] = []

    @staticmethod
    def _make_region(kind: str | None, model: Model, n: int) -> FeasibleRegion:
        if kind is None:
            kind = "simplex" if isinstance(model, GaussianLocationModel) else "nonneg"
        if kind == "simplex":
            return weights.simplex_region(n)
        return weights.nonneg_region()

    # ------------------------------------------------------------------ run

    def run(self) -> TrainResult:
        """Advance to config.n_iters iterations (resuming mid-run is fine)."""
        cfg = self.config
        n = self.model.n
        s = cfg.subsample_size if cfg.subsample_size is not None else n
        full_data = s == n
        all_indices = np.arange(n, dtype=np.intp)
        full_plan = gradients.plan_centering(self.state.indices, all_indices) if full_data else None
        diverged = False
        error = None

        t0 = time.perf_counter()
        try:
            if not self.burned_in:
                for _ in range(cfg.burn_in):
                    self._kernel_sweep()
                self.burned_in = True
                self._record_metrics(n)
            while self.iteration < cfg.n_iters:
                sub = all_indices if full_data else gradients.subsample_indices(
                    n, s, self.subsample_rng
                )
                centered = gradients.center_logliks(
                    self.model, self.state.indices, sub, self.ensemble.states,
                    plan=full_plan,
                )
                est = gradients.estimate_gradient(self.state.w, centered, n, s)
                self.state.w = self.optimizer.step(self.state.w, est.g, self.state.region)
                for _ in range(cfg.kernel_steps_per_iter):
                    self._kernel_sweep()
                self.iteration += 1
                if self.iteration % self.store_stride == 0 or self.iteration == cfg.n_iters:
                    self.trajectory.append(self.state.w.copy())
                    self.trajectory_iters.append(self.iteration)
                if self.iteration % cfg.metric_every == 0 or self.iteration == cfg.n_iters:
                    self.train_seconds += time.perf_counter() - t0
                    self._record_metrics(n)
                    t0 = time.perf_counter()
        except (DivergenceError, kernels.KernelError) as exc:
            diverged = True
            error = f"{type(exc).__name__}: {exc}"
        self.train_seconds += time.perf_counter() - t0

        diag = dict(getattr(self.kernel, "stats", {}))
        diag["kernel_steps"] = self.kernel_steps
        return TrainResult(
            state=self.state,
            trajectory=np.array(self.trajectory),
            trajectory_iters=np.array(self.trajectory_iters),
            records=self.records,
            diverged=diverged,
            error=error,
            diagnostics=diag,
        )

    def _kernel_sweep(self):
        self.ensemble = kernels.ensemble_step(self.kernel, self.state, self.model, self.ensemble)
        self.kernel_steps += self.ensemble.k

    def _record_metrics(self, n: int):
        rec = MetricsRecord(
            iteration=self.iteration,
            cost=cost_proxy(self.config, self.iteration, n),
            wall_train_seconds=self.train_seconds,
        )
        if isinstance(self.model, GaussianLocationModel):
            rec.exact_kl = gaussian_location_kl(self.state, self.model)
        self.records.append(rec)

    # ------------------------------------------------------------- sampling

    def sample(self, n_draws: int, thinning: int = 1) -> tuple[np.ndarray, float]:
        """Draws from the kernel at the frozen weights, round-robin over chains.

        Returns the (n_draws, dim) matrix and the sampling wall-clock seconds.
        """
        if n_draws < 1 or thinning < 1:
            raise ValueError("n_draws and thinning must be positive")
        ctx = self.kernel.prepare(self.state, self.model)
        states = self.ensemble.states.copy()
        k = states.shape[0]
        draws = np.empty((n_draws, states.shape[1]))
        t0 = time.perf_counter()
        for i in range(n_draws * thinning):
            chain = i % k
            states[chain] = self.kernel.step_from(ctx, states[chain], self.sample_rng)
            self.kernel_steps += 1
            if (i + 1) % thinning == 0:
                draws[(i + 1) // thinning - 1] = states[chain]
        return draws, time.perf_counter() - t0

    # ---------------------------------------------------------- checkpoints

    def save_checkpoint(self, path) -> None:
        payload = {
            "config": self.config,
            "iteration": self.iteration,
            "burned_in": self.burned_in,
            "kernel_steps": self.kernel_steps,
            "train_seconds": self.train_seconds,
            "indices": self.state.indices,
            "w": self.state.w,
            "region": self.state.region,
            "optimizer": self.optimizer,
            "ensemble_states": self.ensemble.states,
            "rngs": [r.bit_generator.state for r in self.ensemble.rngs],
            "subsample_rng": self.subsample_rng.bit_generator.state,
            "sample_rng": self.sample_rng.bit_generator.state,
            "trajectory": self.trajectory,
            "trajectory_iters": self.trajectory_iters,
            "records": self.records,
        }
        with open(path, "wb") as fh:
            pickle.dump(payload, fh)

    @classmethod
    def load_checkpoint(cls, path, model: Model) -> "Trainer":
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
        trainer = cls.__new__(cls)
        trainer.config = payload["config"]
        trainer.model = model
        trainer.state = CoresetState(payload["indices"], payload["w"], payload["region"])
        trainer.kernel = kernels.make_kernel(**trainer.config.kernel)
        trainer.optimizer = payload["optimizer"]
        rngs = []
        for state in payload["rngs"]:
            gen = np.random.default_rng(0)
            gen.bit_generator.state = state
            rngs.append(gen)
        trainer.ensemble = kernels.ChainEnsemble(payload["ensemble_states"], rngs)
        trainer.subsample_rng = np.random.default_rng(0)
        trainer.subsample_rng.bit_generator.state = payload["subsample_rng"]
        trainer.sample_rng = np.random.default_rng(0)
        trainer.sample_rng.bit_generator.state = payload["sample_rng"]
        trainer.iteration = payload["iteration"]
        trainer.burned_in = payload["burned_in"]
        trainer.kernel_steps = payload["kernel_steps"]
        trainer.train_seconds = payload["train_seconds"]
        stride = trainer.config.store_stride
        trainer.store_stride = (stride if stride is not None
                                else max(1, trainer.config.n_iters // 1000))
        trainer.trajectory = payload["trajectory"]
        trainer.trajectory_iters = payload["trajectory_iters"]
        trainer.records = payload["records"]
        return trainer


def train(config: TrainConfig, model: Model) -> TrainResult:
    """Convenience wrapper: build a trainer and run it to completion."""
    return Trainer(config, model).run()


def sample_after_training(trainer: Trainer, n_draws: int, thinning: int = 1):
    """Draws from the trained weighted posterior; see ``Trainer.sample``."""
    return trainer.sample(n_draws, thinning)


def extend(config: TrainConfig, extra_iters: int) -> TrainConfig:
    return replace(config, n_iters=config.n_iters + extra_iters)
