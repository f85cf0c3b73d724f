"""Benchmark harness: configure, run, and summarize experiments.

Subcommands
-----------
train     adapt weights for each replicate; write records and checkpoints
sample    draw from saved checkpoints and append sampling metrics
sweep     full study: train + sample + metrics over a swept parameter
baseline  uniform-weight baseline (no adaptation) with the same metrics
metrics   rebuild the summary CSV from existing record files

Configs are declarative JSON; replicate seeds are base seed + replicate
index. Exit codes: 0 on success, 2 for config errors, 3 when at least one
replicate diverged.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import copy
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .kernels import HitAndRunSlice
from .metrics import (MetricsRecord, MomentSummary, bulk_ess, relative_errors,
                      two_moment_kl)
from .models import Dataset, GaussianLocationModel, generate_synthetic, load_csv, make_model
from .training import TrainConfig, Trainer, cost_proxy
from .validation import check_kind


class ConfigError(ValueError):
    pass


GAUSSIAN_TRAIN_DEFAULTS = {
    "n_iters": 5000, "coreset_size": 30, "n_chains": 20, "subsample_size": None,
    "burn_in": 100, "gamma0": None, "alpha": 1.0, "optimizer": "sgd",
    "kernel": {"kind": "gaussian_ar", "beta": 0.8}, "region": "simplex",
}
GLM_TRAIN_DEFAULTS = {
    "n_iters": 10000, "coreset_size": 100, "n_chains": 2, "subsample_size": None,
    "burn_in": 100, "gamma0": 0.5, "alpha": 1.0, "optimizer": "adam",
    "kernel": {"kind": "hit_and_run_slice"}, "region": "nonneg",
}
EVALUATE_DEFAULTS = {"n_draws": 10000, "thinning": 1, "reference": None}
TRAIN_KEYS = set(TrainConfig.__dataclass_fields__) - {"seed"}


def load_spec(path, overrides=None) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_spec(spec, overrides or {})


def resolve_spec(spec: dict, overrides: dict | None = None) -> dict:
    spec = copy.deepcopy(spec)
    for key, value in (overrides or {}).items():
        if value is not None:
            spec[key] = value
    model = spec.get("model")
    if not isinstance(model, dict) or "kind" not in model:
        raise ConfigError("config must contain model.kind")
    try:
        check_kind(model["kind"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if ("synthetic" in model) == ("csv" in model):
        raise ConfigError("model must specify exactly one of synthetic/csv")
    defaults = (GAUSSIAN_TRAIN_DEFAULTS if model["kind"] == "gaussian_location"
                else GLM_TRAIN_DEFAULTS)
    train = {**defaults, **spec.get("train", {})}
    unknown = set(train) - TRAIN_KEYS
    if unknown:
        raise ConfigError(f"unknown train keys: {sorted(unknown)}")
    spec["train"] = train
    evaluate = {**EVALUATE_DEFAULTS, **spec.get("evaluate", {})}
    if evaluate["reference"] is None:
        evaluate["reference"] = ("analytic" if model["kind"] == "gaussian_location"
                                 else "long_run")
    spec["evaluate"] = evaluate
    spec.setdefault("replicates", 1)
    spec.setdefault("seed", 0)
    spec.setdefault("method", "coreset_mcmc")
    if spec.get("sweep") is not None:
        sweep = spec["sweep"]
        if "parameter" not in sweep or "values" not in sweep:
            raise ConfigError("sweep requires parameter and values")
        if sweep["parameter"] not in TRAIN_KEYS:
            raise ConfigError(f"cannot sweep unknown parameter {sweep['parameter']!r}")
    return spec


def build_dataset(spec: dict) -> Dataset:
    model = spec["model"]
    if "synthetic" in model:
        syn = model["synthetic"]
        try:
            return generate_synthetic(model["kind"], syn["n_obs"], syn["p"],
                                      syn.get("seed", spec["seed"]))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad synthetic block: {exc}") from exc
    return load_csv(model["csv"], model["kind"])


def reference_moments(spec: dict, dataset: Dataset, out_dir: Path) -> MomentSummary | None:
    """Moments of the full-data posterior used as the metric reference.

    Analytic for the Gaussian location model; otherwise a long full-data
    slice-sampler run with 20x the evaluation budget, cached on disk.
    """
    kind = spec["evaluate"]["reference"]
    if kind == "none":
        return None
    model = make_model(spec["model"]["kind"], dataset)
    if kind == "analytic":
        if not isinstance(model, GaussianLocationModel):
            raise ConfigError("analytic reference requires the gaussian_location model")
        post = model.full_posterior()
        return MomentSummary.isotropic(post.mu_w, post.sigma2)
    if kind != "long_run":
        raise ConfigError(f"unknown reference kind {kind!r}")

    cache = out_dir / "reference.npz"
    if cache.exists():
        data = np.load(cache)
        return MomentSummary(data["mean"], data["cov"], int(data["n"]))
    n_total = 20 * spec["evaluate"]["n_draws"]
    logpdf = model.weighted_logpdf_fn(np.arange(model.n), np.ones(model.n))
    kernel = HitAndRunSlice()
    rng = np.random.default_rng(np.random.SeedSequence([spec["seed"], 0x5EED]))
    theta = np.zeros(model.dim)
    draws = np.empty((n_total, model.dim))
    for i in range(n_total):
        theta = kernel.step_from(logpdf, theta, rng)
        draws[i] = theta
    summary = MomentSummary.from_draws(draws[n_total // 2:])
    np.savez(cache, mean=summary.mean, cov=summary.cov, n=summary.n)
    return summary


def _train_config(spec: dict, seed: int) -> TrainConfig:
    return TrainConfig(seed=seed, **spec["train"])


def run_replicate(spec, dataset, replicate, out_dir, reference, sample_too=True,
                  tag=""):
    """Train, optionally sample and score, one replicate; returns its records."""
    seed = spec["seed"] + replicate
    model = make_model(spec["model"]["kind"], dataset)
    trainer = Trainer(_train_config(spec, seed), model)
    result = trainer.run()
    stem = f"{spec['method']}{tag}_rep{replicate:03d}"
    extra = {
        "method": spec["method"],
        "sweep_var": spec.get("_sweep_var", ""),
        "sweep_value": spec.get("_sweep_value", ""),
        "replicate": replicate,
    }
    records = result.records
    if result.diverged:
        records.append(MetricsRecord(iteration=trainer.iteration,
                                     cost=cost_proxy(trainer.config, trainer.iteration, model.n),
                                     extra={**extra, "diverged": True, "error": result.error}))
    elif sample_too:
        ev = spec["evaluate"]
        draws, seconds = trainer.sample(ev["n_draws"], ev["thinning"])
        rec = MetricsRecord(iteration=trainer.iteration,
                            cost=cost_proxy(trainer.config, trainer.iteration, model.n),
                            wall_sample_seconds=seconds,
                            extra=dict(extra))
        rec.min_ess_per_sec = _min_ess_per_sec_chains(draws, trainer.config.n_chains, seconds)
        if reference is not None:
            _attach_reference_metrics(rec, draws, reference)
        if isinstance(model, GaussianLocationModel):
            rec.exact_kl = records[-1].exact_kl if records else None
        records.append(rec)
        np.save(out_dir / f"{stem}_draws.npy", draws)
    for rec in records:
        rec.extra = {**extra, **rec.extra}
    trainer.save_checkpoint(out_dir / f"{stem}.ckpt")
    with open(out_dir / f"{stem}.jsonl", "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    return records, result.diverged


def _attach_reference_metrics(rec, draws, reference):
    hat = MomentSummary.from_draws(draws)
    kl = two_moment_kl(hat, reference)
    rec.two_moment_kl = kl if math.isfinite(kl) else None
    rel_mean, rel_cov = relative_errors(hat, reference)
    rec.rel_mean_err = rel_mean if math.isfinite(rel_mean) else None
    rec.rel_cov_err = rel_cov if math.isfinite(rel_cov) else None


def _min_ess_per_sec_chains(draws, k, seconds):
    n = draws.shape[0]
    if n % k == 0 and n // k >= 8:
        chains = draws.reshape(n // k, k, -1).transpose(1, 0, 2)
    else:
        chains = draws[None, ...]
    ess = min(bulk_ess(chains[:, :, j]) for j in range(draws.shape[1]))
    return ess / seconds


def _replicate_worker(args):
    spec, replicate, out_dir, ref_data, sample_too, tag = args
    dataset = build_dataset(spec)
    reference = None
    if ref_data is not None:
        reference = MomentSummary(ref_data[0], ref_data[1], ref_data[2])
    return run_replicate(spec, dataset, replicate, Path(out_dir), reference,
                         sample_too, tag)


def run_experiment(spec, out_dir, threads=1, sample_too=True, tag="") -> tuple[list, int]:
    """All replicates of one setting; returns (records, diverged count)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = build_dataset(spec)
    if dataset.ground_truth is not None:
        with open(out_dir / "truth.jsonl", "w", encoding="utf-8") as fh:
            fh.write(json.dumps(dataset.ground_truth, sort_keys=True) + "\n")
    reference = reference_moments(spec, dataset, out_dir) if sample_too else None
    n_rep = spec["replicates"]
    all_records, n_diverged = [], 0
    if threads > 1:
        ref_data = None if reference is None else (reference.mean, reference.cov, reference.n)
        jobs = [(spec, r, str(out_dir), ref_data, sample_too, tag) for r in range(n_rep)]
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            for records, diverged in pool.map(_replicate_worker, jobs):
                all_records.extend(records)
                n_diverged += int(diverged)
    else:
        for r in range(n_rep):
            records, diverged = run_replicate(spec, dataset, r, out_dir, reference,
                                              sample_too, tag)
            all_records.extend(records)
            n_diverged += int(diverged)
    return all_records, n_diverged


def run_unif_baseline(spec, out_dir, threads=1) -> tuple[list, int]:
    """Uniform-subsampling baseline: no adaptation, same sampling metrics."""
    spec = copy.deepcopy(spec)
    spec["method"] = "unif"
    spec["train"]["n_iters"] = 0
    return run_experiment(spec, out_dir, threads=threads)


def run_sweep(spec, out_dir, threads=1) -> tuple[list, int]:
    if spec.get("sweep") is None:
        return run_experiment(spec, out_dir, threads=threads)
    param, values = spec["sweep"]["parameter"], spec["sweep"]["values"]
    all_records, n_diverged = [], 0
    for value in values:
        sub = copy.deepcopy(spec)
        sub["train"][param] = value
        sub["_sweep_var"] = param
        sub["_sweep_value"] = value
        records, diverged = run_experiment(sub, out_dir, threads=threads,
                                           tag=f"_{param}={value}")
        all_records.extend(records)
        n_diverged += diverged
    return all_records, n_diverged


METRIC_NAMES = ("exact_kl", "two_moment_kl", "min_ess_per_sec",
                "rel_mean_err", "rel_cov_err")


def emit_plot_data(records) -> list[dict]:
    """Tidy percentile rows across replicates, one per metric and iteration."""
    groups: dict[tuple, dict[str, list]] = {}
    costs: dict[tuple, float] = {}
    for rec in records:
        key = (rec.extra.get("method", ""), rec.extra.get("sweep_var", ""),
               rec.extra.get("sweep_value", ""), rec.iteration)
        costs[key] = rec.cost
        bucket = groups.setdefault(key, {})
        for name in METRIC_NAMES:
            value = getattr(rec, name)
            if value is not None and math.isfinite(value):
                bucket.setdefault(name, []).append(value)
    rows = []
    for key in sorted(groups, key=lambda k: tuple(str(x) for x in k[:3]) + (k[3],)):
        method, sweep_var, sweep_value, iteration = key
        for name in METRIC_NAMES:
            values = groups[key].get(name)
            if not values:
                continue
            p25, p50, p75 = (float(v) for v in np.percentile(values, [25, 50, 75]))
            rows.append({
                "method": method, "sweep_var": sweep_var, "sweep_value": sweep_value,
                "iteration": iteration, "cost_proxy": float(costs[key]),
                "metric_name": name, "p25": p25, "p50": p50, "p75": p75,
            })
    return rows


def write_plot_csv(rows, path) -> None:
    cols = ["method", "sweep_var", "sweep_value", "iteration", "cost_proxy",
            "metric_name", "p25", "p50", "p75"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in rows:
            writer.writerow([repr(float(row[c])) if isinstance(row[c], float) else row[c]
                             for c in cols])


def read_records(out_dir) -> list[MetricsRecord]:
    records = []
    for path in sorted(Path(out_dir).glob("*.jsonl")):
        if path.name == "truth.jsonl":
            continue
        with open(path, encoding="utf-8") as fh:
            records.extend(MetricsRecord.from_json(line) for line in fh if line.strip())
    return records


def _summarize(records, out_dir):
    write_plot_csv(emit_plot_data(records), Path(out_dir) / "summary.csv")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="adacoreset",
                                     description="coreset sampler benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "sample", "sweep", "baseline", "metrics"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=(name != "metrics"), help="experiment JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--replicates", type=int, default=None)
        p.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    out_dir = Path(args.out)
    try:
        if args.command == "metrics":
            records = read_records(out_dir)
            if not records:
                raise ConfigError(f"no record files under {out_dir}")
            _summarize(records, out_dir)
            return 0
        spec = load_spec(args.config,
                         {"seed": args.seed, "replicates": args.replicates})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True)

    if args.command == "train":
        records, n_diverged = run_experiment(spec, out_dir, threads=args.threads,
                                             sample_too=False)
    elif args.command == "sample":
        records, n_diverged = _sample_command(spec, out_dir)
    elif args.command == "sweep":
        records, n_diverged = run_sweep(spec, out_dir, threads=args.threads)
    else:  # baseline
        records, n_diverged = run_unif_baseline(spec, out_dir, threads=args.threads)
    _summarize(records, out_dir)
    return 3 if n_diverged else 0


def _sample_command(spec, out_dir):
    """Draw from checkpoints produced by a previous train run."""
    dataset = build_dataset(spec)
    reference = reference_moments(spec, dataset, out_dir)
    records = []
    checkpoints = sorted(Path(out_dir).glob(f"{spec['method']}_rep*.ckpt"))
    if not checkpoints:
        raise ConfigError(f"no checkpoints for method {spec['method']} under {out_dir}")
    for path in checkpoints:
        model = make_model(spec["model"]["kind"], dataset)
        trainer = Trainer.load_checkpoint(path, model)
        ev = spec["evaluate"]
        draws, seconds = trainer.sample(ev["n_draws"], ev["thinning"])
        replicate = int(path.stem.rsplit("rep", 1)[1])
        rec = MetricsRecord(
            iteration=trainer.iteration,
            cost=cost_proxy(trainer.config, trainer.iteration, model.n),
            wall_sample_seconds=seconds,
            extra={"method": spec["method"], "sweep_var": "", "sweep_value": "",
                   "replicate": replicate},
        )
        rec.min_ess_per_sec = _min_ess_per_sec_chains(draws, trainer.config.n_chains, seconds)
        if reference is not None:
            _attach_reference_metrics(rec, draws, reference)
        np.save(Path(out_dir) / f"{path.stem}_draws.npy", draws)
        with open(Path(out_dir) / f"{path.stem}_sample.jsonl", "w", encoding="utf-8") as fh:
            fh.write(rec.to_json() + "\n")
        records.append(rec)
    return records, 0


if __name__ == "__main__":
    sys.exit(main())
