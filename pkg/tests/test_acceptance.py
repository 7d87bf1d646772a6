"""Acceptance suite: one test per criterion, printing a pass line each.

Run with ``pytest tests/test_acceptance.py -v -s``.  The two scaled study
replications (criteria 6 and 7) dominate the runtime; they parallelize over
two worker processes and take on the order of 15 minutes each on a two-core
machine.
"""

import json
import math
import time
from types import SimpleNamespace

import numpy as np
import pytest

from maxseek.acquisition import MaxValueSet, mvi_reward_fn, _mvi_term
from maxseek.gp import GPBelief
from maxseek.harness import (
    ExperimentConfig,
    PlanningView,
    export_plot_data,
    record_to_dict,
    run_batch,
    run_trial,
    score_trial,
)
from maxseek.kernels import SquaredExponential
from maxseek.metrics import mann_whitney_u
from maxseek.planner import SearchConfig, plan_mcts
from maxseek.world import HolonomicPrimitives, ObstacleMap

from oracles import dense_posterior, mwu_exact_enumeration, truncated_gaussian_info

WORKERS = 2

# Shared protocol of the scaled study replications: 10 m x 10 m worlds drawn
# from the squared-exponential prior (l = 1, s2 = 100, noise 1), 200 m budget,
# eps = 1.5 m, 5-action horizon, 250 rollouts per planning iteration.
STUDY = dict(
    lengthscale=1.0,
    signal_variance=100.0,
    noise_variance=1.0,
    budget=200.0,
    epsilon=1.5,
    horizon=5,
    rollouts=250,
    trials=20,
    spectral_features=1000,
    mvi_samples=3,
    argmax_restarts=10,
    workers=WORKERS,
)


def announce(criterion, ok, detail):
    status = "PASS" if ok else "FAIL"
    print(f"\n[criterion {criterion:>2}] {status}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


@pytest.fixture(scope="module")
def convex_batch():
    cfg = ExperimentConfig(
        scenario="convex", planner="plumes",
        baselines=("ucb-myopic", "boustro"), base_seed=1000, **STUDY,
    )
    t0 = time.perf_counter()
    batch = run_batch(cfg)
    batch.elapsed = time.perf_counter() - t0
    batch.config = cfg
    return batch


@pytest.fixture(scope="module")
def nonconvex_batch():
    cfg = ExperimentConfig(
        scenario="non-convex-known", planner="plumes",
        baselines=("ucb-mcts", "ucb-myopic"), base_seed=2000, **STUDY,
    )
    t0 = time.perf_counter()
    batch = run_batch(cfg)
    batch.elapsed = time.perf_counter() - t0
    batch.config = cfg
    return batch


def test_criterion_01_gp_oracle_equivalence():
    rng = np.random.default_rng(11)
    kernel = SquaredExponential(1.0, 100.0)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 51))
        X = rng.uniform(0, 10, (n, 2))
        z = rng.normal(0, 10, n)
        belief = GPBelief(kernel, 1.0)
        i = 0
        while i < n:   # condition in random chunks so the chain is exercised
            k = min(n - i, int(rng.integers(1, 6)))
            belief = belief.condition(X[i : i + k], z[i : i + k])
            i += k
        Q = rng.uniform(0, 10, (10, 2))
        mean, var = belief.posterior(Q)
        mean_o, var_o = dense_posterior(kernel, 1.0, X, z, Q)
        worst = max(
            worst,
            float(np.max(np.abs(mean - mean_o) / np.maximum(np.abs(mean_o), 1e-9))),
            float(np.max(np.abs(var - var_o) / np.abs(var_o))),
        )
    elapsed = time.perf_counter() - t0
    announce(
        1, worst <= 1e-8 and elapsed < 10.0,
        f"cached vs dense posterior on 200 instances: max rel err {worst:.2e} "
        f"(<= 1e-8), runtime {elapsed:.1f}s (< 10s)",
    )


def test_criterion_02_mvi_entropy_oracle():
    rng = np.random.default_rng(12)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        mu = rng.uniform(-10, 10)
        sigma = rng.uniform(0.05, 10.0)
        gamma = rng.uniform(-12.0, 6.0)
        zstar = mu + sigma * gamma
        term = float(_mvi_term(np.array([(zstar - mu) / sigma]))[0])
        worst = max(worst, abs(term - truncated_gaussian_info(gamma)))
    elapsed = time.perf_counter() - t0
    announce(
        2, worst <= 1e-3 and elapsed < 30.0,
        f"closed form vs entropy quadrature on 1000 triples: max err "
        f"{worst:.2e} nats (<= 1e-3), runtime {elapsed:.1f}s (< 30s)",
    )


def test_criterion_03_spectral_fidelity():
    kernel = SquaredExponential(1.0, 100.0)
    setup = np.random.default_rng(777)
    X = setup.uniform(0, 10, (10, 2))
    truth = setup.multivariate_normal(np.zeros(10), kernel(X))
    z = truth + setup.normal(0, 1.0, 10)
    belief = GPBelief(kernel, 1.0, X, z)
    px, py = np.meshgrid(np.linspace(1, 9, 5), np.linspace(1.5, 8.5, 4))
    probes = np.column_stack([px.ravel(), py.ravel()])
    mu, var = belief.posterior(probes)

    rng = np.random.default_rng(95)
    draws = np.array([belief.spectral_sample(1000, rng)(probes) for _ in range(500)])
    emp_mean = draws.mean(axis=0)
    emp_var = draws.var(axis=0, ddof=1)
    se = draws.std(axis=0, ddof=1) / math.sqrt(500)

    mean_ok = bool(np.all(np.abs(emp_mean - mu) <= 3 * se))
    rel = np.abs(emp_var - var) / var
    announce(
        3, mean_ok and float(rel.max()) <= 0.10,
        f"spectral posterior (F=1000, 500 samples, 10 conditioning points): "
        f"mean within 3 SE at all 20 probes = {mean_ok}, variance rel err "
        f"pointwise max {rel.max():.3f} (<= 0.10), rms {np.sqrt((rel**2).mean()):.3f}",
    )


def _tree_world():
    fence = ObstacleMap((0.0, 0.0, 10.0, 10.0))
    prims = HolonomicPrimitives(10, 1.5, 0.5)
    return PlanningView(fence, prims)


def _check_tree(root, config):
    """Visit conservation and widening bound at every node, all depths."""
    stack = [(root, 0)]
    while stack:
        node, depth = stack.pop()
        total = 0
        for ba in node.children:
            total += ba.visits
            bound = math.ceil(ba.visits ** config.widening_at(depth))
            if len(ba.children) > bound:
                return False, f"widening bound broken at depth {depth}"
            for child in ba.children:
                stack.append((child, depth + 1))
        if node.visits != total:
            return False, f"visit count broken at depth {depth}"
    return True, "ok"


def test_criterion_04_tree_invariants():
    rng = np.random.default_rng(13)
    kernel = SquaredExponential(1.0, 100.0)
    view = _tree_world()
    violations = 0
    for seed in range(20):
        X = rng.uniform(0, 10, (12, 2))
        belief = GPBelief(kernel, 1.0, X, rng.normal(0, 10, 12))
        mv = MaxValueSet(np.array([5.0, 12.0, 20.0]), np.zeros((3, 2)))
        cfg = SearchConfig(horizon=5, rollouts=250, seed=seed)
        decision = plan_mcts(belief, (5.0, 5.0, 0.0), view, mvi_reward_fn(mv), cfg)
        ok, why = _check_tree(decision.root, cfg)
        if not (ok and decision.root.visits == 250):
            violations += 1
    announce(
        4, violations == 0,
        f"20 seeded searches (250 rollouts, h=5): visit-count conservation "
        f"and ceil(N^alpha) widening bound held at every node, "
        f"{violations} violations",
    )


def _bandit_choice_rate(rollouts, searches=100):
    actions = [
        SimpleNamespace(samples=np.array([[float(i), 0.0]]),
                        terminal_pose=(float(i), 0.0, 0.0), length=1.5, index=i)
        for i in range(2)
    ]
    view = SimpleNamespace(
        feasible_actions=lambda pose: list(actions),
        belief_coords=lambda action, depth: action.samples,
    )
    kernel = SquaredExponential(1.0, 100.0)
    correct = 0
    for seed in range(searches):
        noise = np.random.default_rng(10_000 + seed)

        def reward(belief, X):
            base = np.where(X[:, 0] == 0.0, 0.2, 0.0)   # A leads by exactly 0.2
            return base + 0.5 * noise.standard_normal(X.shape[0])

        belief = GPBelief(kernel, 1.0)
        cfg = SearchConfig(horizon=1, rollouts=rollouts, seed=seed)
        decision = plan_mcts(belief, (0.0, 0.0, 0.0), view, reward, cfg)
        correct += decision.action.index == 0
    return correct


def test_criterion_05_mcts_convergence():
    rate_100 = _bandit_choice_rate(100)
    rate_500 = _bandit_choice_rate(500)
    announce(
        5, rate_500 >= 95 and rate_500 >= rate_100,
        f"stochastic 2-action bandit (gap 0.2, noise sd 0.5): correct choice "
        f"{rate_500}/100 at 500 rollouts (>= 95), {rate_100}/100 at 100 "
        f"rollouts (non-decreasing)",
    )


def _medians(batch, planner):
    e = batch.aggregate["planners"][planner]
    return e["mss_reward"][0], e["rmse"][0]


def test_criterion_06_convex_study(convex_batch):
    mss_p, rmse_p = _medians(convex_batch, "plumes")
    mss_m, rmse_m = _medians(convex_batch, "ucb-myopic")
    mss_b, rmse_b = _medians(convex_batch, "boustro")
    ordering = mss_p > mss_m and mss_p > mss_b
    rmse_best = min(rmse_m, rmse_b)   # best baseline = lowest median RMSE
    rmse_ok = rmse_p <= 2.0 * rmse_best
    announce(
        6, ordering and rmse_ok and convex_batch.elapsed < 1800.0,
        f"convex 20-trial replication: median mss plumes={mss_p:.0f}, "
        f"ucb-myopic={mss_m:.0f}, boustro={mss_b:.0f}; ordering "
        f"plumes>both = {ordering} (reference 199 > 148 > 27); median rmse "
        f"plumes={rmse_p:.2f} vs 2x best baseline {2 * rmse_best:.2f} "
        f"(ucb-myopic {rmse_m:.2f}, boustro {rmse_b:.2f}) -> {rmse_ok}; "
        f"runtime {convex_batch.elapsed:.0f}s (< 1800s)",
    )


def test_criterion_07_nonconvex_study(nonconvex_batch):
    mss_p, _ = _medians(nonconvex_batch, "plumes")
    mss_t, _ = _medians(nonconvex_batch, "ucb-mcts")
    mss_m, _ = _medians(nonconvex_batch, "ucb-myopic")
    announce(
        7, mss_p > mss_t and mss_p > mss_m,
        f"non-convex (12 known blocks) 20-trial replication: median mss "
        f"plumes={mss_p:.0f} > ucb-mcts={mss_t:.0f} and > "
        f"ucb-myopic={mss_m:.0f} (paper ordering 206 > 115 > 86)",
    )


def _two_bump_grid(path, switch_time=30, nt=90):
    xs = np.linspace(0.0, 10.0, 41)
    cell = xs[1] - xs[0]
    gx, gy = np.meshgrid(xs, xs)
    b1 = np.exp(-((gx - 2.5) ** 2 + (gy - 5.0) ** 2) / (2 * 1.2**2))
    b2 = np.exp(-((gx - 7.5) ** 2 + (gy - 5.0) ** 2) / (2 * 1.2**2))
    with open(path, "w") as fh:
        fh.write(f"41,41,{nt},{cell:.10g}\n")
        for t in range(nt):
            h1, h2 = (10.0, 6.0) if t < switch_time else (6.0, 10.0)
            grid = h1 * b1 + h2 * b2
            for j, y in enumerate(xs):
                for i, x in enumerate(xs):
                    fh.write(f"{x:.10g},{y:.10g},{t},{grid[j, i]:.10g}\n")


def _reward_mass_fraction(record, step, center, radius, out_dir):
    (path,) = export_plot_data(record, "reward-heatmap", out_dir, step=step)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    d = np.hypot(data[:, 0] - center[0], data[:, 1] - center[1])
    total = data[:, 2].sum()
    return float(data[d < radius, 2].sum() / total)


def test_criterion_08_spatiotemporal_redistribution(tmp_path):
    grid_file = str(tmp_path / "two_bump.grid")
    _two_bump_grid(grid_file, switch_time=30)
    cfg = ExperimentConfig(
        scenario="grid-file", environment_file=grid_file, planner="plumes",
        lengthscale=1.5, time_lengthscale=20.0, signal_variance=100.0,
        noise_variance=0.5, budget=120.0, epsilon=1.5, trials=1,
        base_seed=42, horizon=5, rollouts=250, spectral_features=256,
        mvi_samples=3, argmax_restarts=10,
    )
    record = run_trial(cfg, 0)
    new_max = (7.5, 5.0)
    before = _reward_mass_fraction(record, 20, new_max, 1.5, str(tmp_path))
    after = _reward_mass_fraction(record, 60, new_max, 1.5, str(tmp_path))
    announce(
        8, after >= 2.0 * before,
        f"two-bump dynamic field (switch at t=30): MVI reward mass fraction "
        f"within 1.5 m of the new maximum {before:.4f} at t=20 -> "
        f"{after:.4f} at t=60 (>= 2x)",
    )


def test_criterion_09_mann_whitney_exact():
    rng = np.random.default_rng(14)
    worst = 0.0
    exact_u = True
    for n in range(1, 8):
        for m in range(1, 8):
            for draw in range(3):
                a = rng.integers(0, 5, n).astype(float)   # ties guaranteed
                b = rng.integers(0, 5, m).astype(float)
                u, p = mann_whitney_u(a, b)
                u_o, p_o = mwu_exact_enumeration(a, b)
                exact_u &= u == u_o
                worst = max(worst, abs(p - p_o))
    announce(
        9, exact_u and worst < 1e-10,
        f"exact enumeration agreement for all n,m <= 7 (ties included): "
        f"U exact, max |p - p_oracle| = {worst:.2e} (< 1e-10)",
    )


def test_criterion_10_determinism(convex_batch):
    cfg = convex_batch.config
    rec_a = run_trial(cfg, 0, "plumes")
    rec_b = run_trial(cfg, 0, "plumes")
    rep_a = score_trial(rec_a, cfg.epsilon)
    rep_b = score_trial(rec_b, cfg.epsilon)
    da, db = record_to_dict(rec_a), record_to_dict(rec_b)
    for d in (da, db):
        for e in d["entries"]:
            e.pop("wall_time")   # wall clock is the one physical field
    records_equal = json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True)
    pooled = next(
        t for t in convex_batch.trials if t.planner == "plumes" and t.trial == 0
    )
    pool_equal = pooled.metrics == rep_a
    announce(
        10, rep_a == rep_b and records_equal and pool_equal,
        f"repeated acceptance trial bit-identical: metrics {rep_a} == {rep_b}, "
        f"records identical = {records_equal}, worker-pool run identical = "
        f"{pool_equal}",
    )
