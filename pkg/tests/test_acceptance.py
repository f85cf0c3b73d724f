"""Acceptance suite: one test per numbered criterion, printed pass/fail lines.

The Gaussian location model admits closed-form posteriors, exact KL, and an
analytic weight-gradient, so most checks here compare the stochastic pipeline
against analytic oracles at study scale. Criteria whose stated configuration
rests on the premise that a size-30 coreset of 20-dimensional data can be
exact are additionally run as stated and marked xfail: the premise is false
for this data law (see the strict-xfail tests and the dev notes), and each
such criterion has a premise-corrected variant asserted green at M=100 where
exactness holds.

Run with -s to see the per-criterion summary lines.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.stats import kstest

from adacoreset.gradients import (analytic_gradient, center_logliks, estimate_gradient,
                                  exact_coreset_weights, gram_matrix)
from adacoreset.kernels import CoordSlice, HitAndRunSlice, slice_step_1d
from adacoreset.metrics import MomentSummary, bulk_ess, two_moment_kl
from adacoreset.models import generate_synthetic, make_model
from adacoreset.optimizers import Schedule, make_optimizer
from adacoreset.training import TrainConfig, Trainer, train
from adacoreset.weights import project, simplex_region

N_OBS, DIM = 10_000, 20
DATA_SEED = 2024
RUN_SEEDS = range(10)


# --------------------------------------------------------------------- study

@pytest.fixture(scope="session")
def location_model():
    ds = generate_synthetic("gaussian_location", N_OBS, DIM, seed=DATA_SEED)
    return make_model("gaussian_location", ds)


def gauss_arm(model, m, k, s, alpha, n_iters, seed, beta=0.8, optimizer="sgd",
              gamma0=None, metric_every=10):
    cfg = TrainConfig(n_iters=n_iters, coreset_size=m, n_chains=k, subsample_size=s,
                      burn_in=100, gamma0=gamma0, alpha=alpha, optimizer=optimizer,
                      kernel={"kind": "gaussian_ar", "beta": beta}, region="simplex",
                      seed=seed, metric_every=metric_every,
                      store_stride=max(1, n_iters // 100))
    result = train(cfg, model)
    assert not result.diverged, result.error
    iters = np.array([r.iteration for r in result.records])
    kls = np.array([r.exact_kl for r in result.records])
    return iters, kls


def run_seeds(model, **kwargs):
    curves = [gauss_arm(model, seed=seed, **kwargs) for seed in RUN_SEEDS]
    iters = curves[0][0]
    assert all(np.array_equal(c[0], iters) for c in curves)
    return iters, np.array([c[1] for c in curves])


def log_med(kls):
    return np.median(np.log10(np.maximum(kls, 1e-300)), axis=0)


@pytest.fixture(scope="session")
def full_data_m30(location_model):
    return run_seeds(location_model, m=30, k=20, s=None, alpha=1.0, n_iters=5000)


@pytest.fixture(scope="session")
def full_data_m100(location_model):
    return run_seeds(location_model, m=100, k=20, s=None, alpha=1.0, n_iters=5000)


@pytest.fixture(scope="session")
def full_data_m10(location_model):
    return run_seeds(location_model, m=10, k=20, s=None, alpha=1.0, n_iters=2000)


# ------------------------------------------------- 1. gradient unbiasedness

def test_criterion_1_gradient_unbiasedness():
    t0 = time.time()
    ds = generate_synthetic("gaussian_location", 5, 2, seed=71)
    model = make_model("gaussian_location", ds)
    idx = np.array([0, 1, 2])
    w = np.array([2.0, 1.4, 1.6])  # fixed feasible point, sum = N
    exact = analytic_gradient(model, w, idx)

    reps, k = 200_000, 4
    rng = np.random.default_rng(7)
    post = model.exact_posterior(w, idx)
    th = post.sample(reps * k, rng).reshape(reps, k, 2)
    X = ds.features
    ll = -0.5 * ((X[:, None, None, :] - th[None, :, :, :]) ** 2).sum(-1) \
        - math.log(2 * math.pi)
    cent = ll - ll.mean(axis=2, keepdims=True)
    A = cent[idx]

    worst = {}
    for s in (5, 2):
        if s == 5:
            data_term = cent.sum(axis=0)
        else:
            picks = np.argsort(rng.random((reps, 5)), axis=1)[:, :2]
            sub = np.take_along_axis(cent.transpose(1, 0, 2), picks[:, :, None], axis=1)
            data_term = (5 / 2) * sub.sum(axis=1)
        ck = np.einsum("m,mrk->rk", w, A) - data_term
        g = np.einsum("mrk,rk->rm", A, ck) / (k - 1)
        se = g.std(axis=0, ddof=1) / math.sqrt(reps)
        z = np.abs(g.mean(axis=0) - exact) / se
        worst[s] = z.max()
        assert np.all(z < 4.0), f"S={s}: z-scores {z}"
    dt = time.time() - t0
    assert dt < 60
    print(f"\nACCEPTANCE 1 (gradient unbiasedness): PASS "
          f"max|z| S=N {worst[5]:.2f}, S=2 {worst[2]:.2f} ({dt:.0f}s)")


# --------------------------------------------- 2. exact-coreset fixed point

def test_criterion_2_exact_coreset_fixed_point(location_model):
    model = location_model
    rng = np.random.default_rng(5)
    idx = np.sort(rng.choice(N_OBS, size=100, replace=False))
    region = simplex_region(float(N_OBS))
    w_star = exact_coreset_weights(model, idx, region)
    assert w_star is not None, "no exact coreset at M=100"
    post = model.exact_posterior(w_star, idx)
    all_idx = np.arange(N_OBS)
    worst_g, worst_ident = 0.0, 0.0
    for _ in range(100):
        thetas = post.sample(20, rng)
        cl = center_logliks(model, idx, all_idx, thetas)
        est = estimate_gradient(w_star, cl, N_OBS, N_OBS)
        worst_g = max(worst_g, float(np.abs(est.g).max()))
        ident = gram_matrix(cl) @ (np.full(100, N_OBS / 100) - w_star)
        cl_w = estimate_gradient(np.full(100, N_OBS / 100), cl, N_OBS, N_OBS)
        worst_ident = max(worst_ident, float(np.abs(cl_w.g - ident).max()))
    assert worst_g < 1e-8
    assert worst_ident < 1e-8
    print(f"\nACCEPTANCE 2 (exact-coreset fixed point): PASS "
          f"max|g(w*)| {worst_g:.2e}, max identity gap {worst_ident:.2e}")


# ------------------------------------------------------ 3. Thm-1 behavior

def _thm1_stats(iters, kls):
    ratios = kls[:, -1] / kls[:, 0]
    window = (iters >= 500) & (iters <= 5000)
    slopes = []
    for row in kls:
        y = np.log10(np.maximum(row[window], 1e-300))
        slopes.append(np.polyfit(iters[window], y, 1)[0])
    return float(np.median(ratios)), float(np.median(slopes))


def test_criterion_3_geometric_decay(full_data_m100):
    iters, kls = full_data_m100
    ratio, slope = _thm1_stats(iters, kls)
    assert ratio < 1e-4
    assert slope < 0
    print(f"\nACCEPTANCE 3 (geometric decay, exact coreset at M=100): PASS "
          f"median KL(T)/KL(0) {ratio:.2e}, median LS slope {slope:.2e}")


@pytest.mark.xfail(strict=True,
                   reason="no exact coreset exists at M=30 for d=20 data; the KL "
                          "plateaus at the constrained least-squares floor")
def test_criterion_3_as_stated_m30(full_data_m30):
    iters, kls = full_data_m30
    ratio, slope = _thm1_stats(iters, kls)
    print(f"\nACCEPTANCE 3 (as stated, M=30): ratio {ratio:.3g} (needs < 1e-4), "
          f"slope {slope:.2e}")
    assert ratio < 1e-4


# ------------------------------------------------------ 4. Thm-2 behavior

def _thm2_ratio(model, m, gamma0):
    iters, kls = run_seeds(model, m=m, k=20, s=30, alpha=0.5, n_iters=50_000,
                           gamma0=gamma0, metric_every=50)
    at500 = kls[:, np.searchsorted(iters, 500)]
    return float(np.median(kls[:, -1] / at500))


def test_criterion_4_subsampled_decay(location_model):
    ratio = _thm2_ratio(location_model, m=100, gamma0=2.0)
    assert ratio < 0.01
    print(f"\nACCEPTANCE 4 (subsampled decay, M=100, rate N/(50M)): PASS "
          f"median KL(5e4)/KL(500) {ratio:.2e}")


@pytest.mark.xfail(strict=True,
                   reason="at M=30 the LS plateau dominates both window ends; at the "
                          "default rate even M=100 sits on the noise floor, which "
                          "scales like the step size and pins the ratio near 0.1")
def test_criterion_4_as_stated(location_model):
    ratio = _thm2_ratio(location_model, m=30, gamma0=None)
    print(f"\nACCEPTANCE 4 (as stated, M=30, rate N/(10M)): ratio {ratio:.3g} "
          f"(needs < 0.01)")
    assert ratio < 0.01


# --------------------------------------------- 5. study-panel reproduction

def _cost_curves(model, m, k, n_iters, seeds=RUN_SEEDS, **kwargs):
    per_seed = []
    for seed in seeds:
        iters, kls = gauss_arm(model, m=m, k=k, seed=seed, n_iters=n_iters, **kwargs)
        cost = (m + (kwargs.get("s") or N_OBS)) * math.log(k) * iters
        per_seed.append((cost, kls))
    return per_seed


def _band_on_grid(per_seed, grid):
    rows = []
    for cost, kls in per_seed:
        rows.append(np.interp(np.log(grid), np.log(cost[1:]),
                              np.log10(np.maximum(kls[1:], 1e-300))))
    arr = np.array(rows)
    return np.median(arr, 0), np.percentile(arr, 25, 0), np.percentile(arr, 75, 0)


@pytest.mark.xfail(strict=True,
                   reason="the cost proxy charges log K per iteration while the "
                          "expected per-iteration decay is K-independent, and the "
                          "K=2 gradient-noise equilibrium sits an order of magnitude "
                          "above K=100's; the curves never overlap on the cost axis")
def test_criterion_5a_as_stated(location_model):
    arms = {2: _cost_curves(location_model, m=30, k=2, n_iters=13_000, s=None,
                            alpha=1.0, metric_every=20),
            100: _cost_curves(location_model, m=30, k=100, n_iters=2_000, s=None,
                              alpha=1.0, metric_every=20)}
    lo = max(min(c[0][1] for c in arms[2]), min(c[0][1] for c in arms[100]))
    hi = min(max(c[0][-1] for c in arms[2]), max(c[0][-1] for c in arms[100]))
    grid = np.exp(np.linspace(math.log(lo), math.log(hi), 60))
    m2, lo2, hi2 = _band_on_grid(arms[2], grid)
    m100, lo100, hi100 = _band_on_grid(arms[100], grid)
    in_band = ((m2 >= lo100) & (m2 <= hi100)) | ((m100 >= lo2) & (m100 <= hi2))
    print(f"\nACCEPTANCE 5a (as stated): overlap fraction {in_band.mean():.2f}, "
          f"final gap {abs(m2[-1] - m100[-1]):.2f} decades")
    assert in_band.mean() > 0.5


def test_criterion_5a_transient_k_insensitivity(location_model):
    # defensible form of the claim: at a K=2-stable rate, expected per-iteration
    # decay with full-data gradients barely depends on K through the transient
    arms = {}
    for k in (2, 100):
        iters, kls = run_seeds(location_model, m=100, k=k, s=None, alpha=1.0,
                               n_iters=1500, gamma0=0.5)
        arms[k] = (iters, log_med(kls))
    iters = arms[2][0]
    window = iters <= 1000
    gap = np.abs(arms[2][1][window] - arms[100][1][window])
    decay2 = arms[2][1][0] - arms[2][1][window][-1]
    decay100 = arms[100][1][0] - arms[100][1][window][-1]
    assert gap.max() < 0.8
    assert decay2 > 1.3 and decay100 > 1.3
    print(f"\nACCEPTANCE 5a (transient K-insensitivity, M=100): PASS "
          f"max median gap {gap.max():.2f} decades; decay K=2 {decay2:.1f}, "
          f"K=100 {decay100:.1f} decades over 1000 iterations")


def _final_medians_at_cost(model, m, ks, budget):
    finals = {}
    for k in ks:
        n_iters = int(budget / ((m + 30) * math.log(k)))
        _, kls = run_seeds(model, m=m, k=k, s=30, alpha=0.5, n_iters=n_iters,
                           metric_every=max(10, n_iters // 100))
        finals[k] = float(np.median(kls[:, -1]))
    return finals


def test_criterion_5b_chain_count_saturation(location_model):
    finals = _final_medians_at_cost(location_model, 100, (2, 5, 20, 100), 3e6)
    assert finals[2] > finals[5] > finals[20] >= finals[100] * 0.8
    drop_2_20 = math.log10(finals[2] / finals[20])
    drop_20_100 = math.log10(max(finals[20] / finals[100], 1.0))
    assert drop_2_20 > 0.4
    assert drop_20_100 < 0.4 * drop_2_20
    print(f"\nACCEPTANCE 5b (K saturation at matched cost, M=100): PASS "
          f"medians {finals}; log10 drop 2->20 {drop_2_20:.2f}, "
          f"20->100 {drop_20_100:.2f}")


@pytest.mark.xfail(strict=True,
                   reason="at M=30 the least-squares plateau dominates every K arm, "
                          "so growing K cannot improve the KL at matched cost")
def test_criterion_5b_as_stated_m30(location_model):
    finals = _final_medians_at_cost(location_model, 30, (2, 20), 3e6)
    print(f"\nACCEPTANCE 5b (as stated, M=30): medians {finals}")
    assert finals[2] > 3 * finals[20]


def test_criterion_5c_persisting_error(full_data_m10, full_data_m100):
    _, kls10 = full_data_m10
    _, kls100 = full_data_m100
    plateau10 = float(np.median(kls10[:, -1]))
    final100 = float(np.median(kls100[:, -1]))
    assert plateau10 > 1e-3
    assert final100 < 1e-3
    print(f"\nACCEPTANCE 5c (persisting error): PASS M=10 plateau {plateau10:.3g} "
          f"> 1e-3; M=100 final {final100:.3g} < 1e-3")


@pytest.mark.xfail(strict=True,
                   reason="M=30 has no exact coreset for d=20 data and plateaus at "
                          "the constrained least-squares floor, far above 1e-3")
def test_criterion_5c_as_stated_m30(full_data_m30):
    _, kls30 = full_data_m30
    plateau30 = float(np.median(kls30[:, -1]))
    print(f"\nACCEPTANCE 5c (as stated, M=30): plateau {plateau30:.3g} (needs < 1e-3)")
    assert plateau30 < 1e-3


def test_criterion_5d_mixing_rate_insensitivity(location_model):
    arms = {}
    for beta in (0.0, 0.5, 0.9):
        _, kls = run_seeds(location_model, m=30, k=20, s=30, alpha=0.5,
                           n_iters=20_000, beta=beta, metric_every=40)
        logk = np.log10(np.maximum(kls[:, 1:], 1e-300))
        arms[beta] = (np.median(logk, 0), np.percentile(logk, 25, 0),
                      np.percentile(logk, 75, 0))
    worst = 0.0
    for b1, b2 in itertools.permutations(arms, 2):
        med = arms[b1][0]
        lo, hi = arms[b2][1], arms[b2][2]
        worst = max(worst, float(np.maximum(lo - med, med - hi).max()))
    assert worst < 0.2
    print(f"\nACCEPTANCE 5d (mixing-rate insensitivity): PASS worst excess of any "
          f"median beyond another beta's IQR band: {worst:.3f} decades")


# ------------------------------------------------ 6. slice-sampler law

def _chain_moment_check(kernel, dim, n_draws, seed):
    logpdf = lambda x: -0.5 * float(np.atleast_1d(x) @ np.atleast_1d(x))
    rng = np.random.default_rng(seed)
    x = np.zeros(dim)
    draws = np.empty((n_draws, dim))
    for i in range(n_draws):
        x = kernel.step_from(logpdf, x, rng)
        draws[i] = x
    for j in range(dim):
        ess = bulk_ess(draws[:, j])
        se = draws[:, j].std(ddof=1) / math.sqrt(ess)
        assert abs(draws[:, j].mean()) < 4 * se, (dim, j)
        assert 0.95 < draws[:, j].var(ddof=1) < 1.05, (dim, j)


def test_criterion_6_slice_sampler_correctness():
    t0 = time.time()
    for dim in (1, 5):
        _chain_moment_check(HitAndRunSlice(), dim, 200_000, seed=dim)
        _chain_moment_check(CoordSlice(), dim, 200_000, seed=10 + dim)
    rng = np.random.default_rng(3)
    box = lambda s: 0.0 if 0.0 <= s <= 1.0 else -math.inf
    u = np.array([slice_step_1d(box, 0.5, 1.5, 10, rng) for _ in range(10_000)])
    p = kstest(u, "uniform").pvalue
    assert p > 0.001
    print(f"\nACCEPTANCE 6 (slice samplers on N(0,I), uniform box KS p={p:.3f}): "
          f"PASS ({time.time()-t0:.0f}s)")


# --------------------------------------------------------- 7. ESS oracle

def test_criterion_7_ess_oracle():
    rng = np.random.default_rng(11)
    iid = rng.standard_normal((4, 2500))
    ess_iid = bulk_ess(iid)
    assert 0.8 * iid.size <= ess_iid <= 1.2 * iid.size

    rho, n = 0.5, 100_000
    z = np.empty(n)
    z[0] = rng.standard_normal()
    innov = rng.standard_normal(n) * math.sqrt(1 - rho * rho)
    for i in range(1, n):
        z[i] = rho * z[i - 1] + innov[i]
    ess_ar = bulk_ess(z)
    theory = n * (1 - rho) / (1 + rho)
    assert abs(ess_ar - theory) / theory < 0.15
    assert bulk_ess(np.exp(z)) == ess_ar
    print(f"\nACCEPTANCE 7 (ESS oracle): PASS iid {ess_iid:.0f}/{iid.size}, "
          f"AR(1) {ess_ar:.0f} vs {theory:.0f}, transform-invariant")


# ------------------------------------------------ 8. GLM benchmark trend

def _long_run_reference(model, n_steps, seed):
    logpdf = model.weighted_logpdf_fn(np.arange(model.n), np.ones(model.n))
    kernel = HitAndRunSlice()
    rng = np.random.default_rng(seed)
    theta = np.zeros(model.dim)
    draws = np.empty((n_steps, model.dim))
    for i in range(n_steps):
        theta = kernel.step_from(logpdf, theta, rng)
        draws[i] = theta
    return MomentSummary.from_draws(draws[n_steps // 2:])


def _glm_two_moment_kls(kind, n_iters):
    ds = generate_synthetic(kind, N_OBS, 5, seed=DATA_SEED)
    model = make_model(kind, ds)
    reference = _long_run_reference(model, 20 * 10_000, seed=987)
    kls = []
    for seed in RUN_SEEDS:
        cfg = TrainConfig(n_iters=n_iters, coreset_size=100, n_chains=2,
                          subsample_size=None, burn_in=100, gamma0=0.5, alpha=1.0,
                          optimizer="adam", kernel={"kind": "hit_and_run_slice"},
                          region="nonneg", seed=seed, metric_every=2000)
        trainer = Trainer(cfg, model)
        result = trainer.run()
        assert not result.diverged, result.error
        draws, _ = trainer.sample(10_000)
        kls.append(two_moment_kl(MomentSummary.from_draws(draws), reference))
    return float(np.median(kls))


def test_criterion_8_glm_benchmark_beats_uniform():
    t0 = time.time()
    verdict = {}
    for kind in ("linear_reg", "logistic_reg"):
        trained = _glm_two_moment_kls(kind, n_iters=10_000)
        unif = _glm_two_moment_kls(kind, n_iters=0)
        verdict[kind] = (trained, unif)
        assert trained <= unif, f"{kind}: trained {trained} worse than uniform {unif}"
    assert any(unif > 3 * trained for trained, unif in verdict.values())
    msg = ", ".join(f"{kind}: {tr:.3g} vs unif {un:.3g}"
                    for kind, (tr, un) in verdict.items())
    print(f"\nACCEPTANCE 8 (GLM benchmark): PASS {msg} ({time.time()-t0:.0f}s)")


# --------------------------------------------- 9. determinism and resume

def test_criterion_9_determinism_and_resume(tmp_path):
    ds = generate_synthetic("gaussian_location", 500, 4, seed=33)
    model = make_model("gaussian_location", ds)
    kwargs = dict(coreset_size=16, n_chains=6, subsample_size=40, burn_in=20,
                  gamma0=1.0, alpha=0.5, optimizer="adam",
                  kernel={"kind": "hit_and_run_slice"}, region="simplex", seed=50,
                  metric_every=10, store_stride=1)
    r1 = train(TrainConfig(n_iters=100, **kwargs), model)
    r2 = train(TrainConfig(n_iters=100, **kwargs), model)
    assert np.array_equal(r1.trajectory, r2.trajectory)

    half = Trainer(TrainConfig(n_iters=50, **kwargs), model)
    half.run()
    path = tmp_path / "mid.ckpt"
    half.save_checkpoint(path)
    resumed = Trainer.load_checkpoint(path, model)
    resumed.config = TrainConfig(n_iters=100, **kwargs)
    r3 = resumed.run()
    assert np.array_equal(r1.trajectory, r3.trajectory)
    print("\nACCEPTANCE 9 (determinism and checkpoint resume): PASS bitwise equal")


# ----------------------------------- 10. projection and optimizer suite

def _brute_simplex(w, total):
    m = w.size
    best, best_d = None, np.inf
    for pattern in itertools.product([0, 1], repeat=m):
        free = [i for i in range(m) if pattern[i]]
        if not free:
            continue
        v = np.zeros(m)
        tau = (w[free].sum() - total) / len(free)
        v[free] = w[free] - tau
        if np.any(v < -1e-12):
            continue
        d = float(np.sum((v - w) ** 2))
        if d < best_d:
            best, best_d = v, d
    return best


def test_criterion_10_projection_optimizer_properties():
    rng = np.random.default_rng(99)
    region = simplex_region(10.0)
    for _ in range(10_000):
        m = int(rng.integers(1, 9))
        w = rng.normal(0, 8, size=m)
        p = project(w, region)
        assert np.array_equal(project(p, region), p)
        v = rng.dirichlet(np.ones(m)) * 10.0
        assert np.linalg.norm(p - w) <= np.linalg.norm(v - w) + 1e-10

    for _ in range(300):
        m = int(rng.integers(1, 7))
        w = rng.normal(0, 8, size=m)
        assert np.allclose(project(w, region), _brute_simplex(w, 10.0), atol=1e-9)

    for kind in ("sgd", "adam"):
        opt = make_optimizer(kind, Schedule(0.8, 0.5))
        w = np.full(6, 10 / 6)
        for _ in range(5_000):
            w = opt.step(w, rng.normal(0, 5, size=6), region)
            assert region.contains(w)
    print("\nACCEPTANCE 10 (projection and optimizer properties): PASS")
