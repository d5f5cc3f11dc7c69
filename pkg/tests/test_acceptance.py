"""End-to-end acceptance checks, one test per criterion.

Every test prints a single ``PASS``/``FAIL`` line (repeated in the terminal
summary) with the measured quantity next to its threshold and runtime.
"""
import time

import numpy as np
import pytest

from helpers import grid_best_target, simplex_grid, target_instance
from optionem.em import m_step, q_value, sufficient_stats
from optionem.experiment import ExperimentConfig, mu_sweep, run_experiment, sample_paths
from optionem.families import TargetSeekingFamily
from optionem.model import Theta, point_prior
from optionem.oracle import oracle_backward, oracle_forward, oracle_q_value, oracle_smoothing, random_instance
from optionem.simulator import make_grid_env, make_rng, path_seed, sample_stationary
from optionem.smoothing import smooth
from optionem.stability import tv_forgetting_experiment

THETA_STAR = Theta(0.6, 0.7, 0.8)
MU_RIGHT = np.array([0.0, 1.0])
MASTER_SEED = 0


def _max_abs(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def test_criterion_1_oracle_equivalence(instances, acceptance):
    start = time.perf_counter()
    worst = 0.0
    for fam, th, obs, mu, env in instances:
        tab = smooth(fam, th, obs, mu)
        ref = oracle_smoothing(fam, th, obs, mu, env)
        worst = max(
            worst,
            _max_abs(tab.gamma, ref.gamma),
            _max_abs(tab.gamma2, ref.gamma2),
            _max_abs(tab.forward.values, oracle_forward(fam, th, obs, mu)),
            _max_abs(tab.backward.values, oracle_backward(fam, th, obs)),
            abs(tab.log_marginal - ref.log_marginal),
        )
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 30
    acceptance("1", ok, f"max abs error {worst:.2e} (<= 1e-9), {elapsed:.1f}s (< 30s)")
    assert ok


def test_criterion_2_q_equivalence(instances, acceptance):
    rng = make_rng(1)
    thetas = [fam.random_theta(rng) for fam, *_ in instances]
    start = time.perf_counter()
    worst = 0.0
    for (fam, th, obs, mu, env), th_prime in zip(instances, thetas):
        got = q_value(fam, th_prime, smooth(fam, th, obs, mu), obs)
        worst = max(worst, abs(got - oracle_q_value(fam, th_prime, th, obs, mu)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10
    acceptance("2", ok, f"max abs error {worst:.2e} (<= 1e-9), {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_3_m_step(acceptance):
    start = time.perf_counter()
    rng = make_rng(3)
    worst_gap = np.inf
    for i in range(100):
        if i % 2:
            fam, th, obs, mu, env = random_instance(rng)
        else:
            fam, th, obs = target_instance(rng)
            mu = MU_RIGHT
        tab = smooth(fam, th, obs, mu)
        gap = q_value(fam, m_step(fam, tab, obs, th), tab, obs) - q_value(fam, th, tab, obs)
        worst_gap = min(worst_gap, gap)
    worst_cell = 0.0
    for _ in range(10):
        fam, th, obs = target_instance(rng, T=150)
        tab = smooth(fam, th, obs, MU_RIGHT)
        new = m_step(fam, tab, obs, th)
        best = grid_best_target(fam, sufficient_stats(fam, tab, obs), new)
        worst_cell = max(worst_cell, _max_abs(best, new.vector()))

        fam, th, obs, mu, env = random_instance(rng)
        tab = smooth(fam, th, obs, mu)
        new = m_step(fam, tab, obs, th)
        stats = sufficient_stats(fam, tab, obs)
        for w_block, p_block in ((stats.hi, new.hi), (stats.lo, new.lo), (stats.b, new.b)):
            k = w_block.shape[-1]
            if k == 1:
                continue
            grid = simplex_grid(k, fam.floor)
            logs = np.log(grid)
            for w, p in zip(w_block.reshape(-1, k), p_block.reshape(-1, k)):
                if w.sum() > 0:
                    worst_cell = max(worst_cell, _max_abs(grid[int(np.argmax(logs @ w))], p))
    elapsed = time.perf_counter() - start
    ok = worst_gap >= -1e-12 and worst_cell <= 1e-3 + 1e-9 and elapsed < 60
    acceptance(
        "3", ok,
        f"min Q gain {worst_gap:.2e} (>= -1e-12), max grid offset {worst_cell:.2e} (<= 1e-3), {elapsed:.1f}s (< 60s)",
    )
    assert ok


def test_criterion_4_self_consistency(acceptance):
    start = time.perf_counter()
    fam = TargetSeekingFamily()
    env = make_grid_env()
    dists = []
    for i in range(10):
        obs = sample_stationary(fam, THETA_STAR, env, 50_000, seed=path_seed(MASTER_SEED, i, stream=4)).observations()
        new = m_step(fam, smooth(fam, THETA_STAR, obs, MU_RIGHT), obs, THETA_STAR)
        dists.append(new.distance(THETA_STAR))
    elapsed = time.perf_counter() - start
    n_ok = sum(d <= 0.05 for d in dists)
    ok = n_ok >= 9 and elapsed < 120
    acceptance("4", ok, f"{n_ok}/10 seeds within 0.05 (max {max(dists):.4f}), {elapsed:.1f}s (< 120s)")
    assert ok


DESK = ExperimentConfig(n_paths=10, n_iters=300, T_list=(2000, 8000), master_seed=MASTER_SEED)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    table = run_experiment(DESK, out)
    return table, out, time.perf_counter() - start


def test_criterion_5a_early_decay(desk_run, acceptance):
    table, _, elapsed = desk_run
    ratios = {T: table.err(10, T) / table.err(0, T) for T in DESK.T_list}
    ok = all(r <= 0.7 for r in ratios.values()) and elapsed < 300
    detail = ", ".join(f"err(10,{T})/err(0,{T}) = {r:.4f}" for T, r in ratios.items())
    acceptance("5a", ok, f"{detail} (<= 0.7), {elapsed:.1f}s (< 300s)")
    assert ok


def test_criterion_5b_late_ordering(desk_run, acceptance):
    table, _, _ = desk_run
    e2, e8 = table.err(300, 2000), table.err(300, 8000)
    ok = e8 <= 1.10 * e2
    acceptance("5b", ok, f"err(300,8000) = {e8:.4f} vs 1.10*err(300,2000) = {1.10 * e2:.4f}")
    assert ok


def test_criterion_5c_initial_error(desk_run, acceptance):
    table, _, _ = desk_run
    dev = max(abs(table.err(0, T) - np.sqrt(0.03)) for T in DESK.T_list)
    ok = dev <= 1e-12
    acceptance("5c", ok, f"|err(0,T) - sqrt(0.03)| = {dev:.1e} (<= 1e-12)")
    assert ok


def test_criterion_6_forgetting(acceptance):
    start = time.perf_counter()
    fam = TargetSeekingFamily()
    env = make_grid_env()
    k_list = (1, 10, 100, 1000)
    core = 200
    kmax = max(k_list)
    violations = 0
    worst_far = 0.0
    for i in range(20):
        obs = sample_stationary(fam, THETA_STAR, env, core + 2 * kmax, seed=path_seed(MASTER_SEED, i, stream=6))
        rep = tv_forgetting_experiment(
            fam, THETA_STAR, obs.observations(), (kmax, kmax + core), k_list, (point_prior(0, 2), point_prior(1, 2))
        )
        violations += len(rep.violations)
        worst_far = max(worst_far, rep.max_tv(1000))
    elapsed = time.perf_counter() - start
    ok = violations == 0 and worst_far < 1e-8 and elapsed < 120
    acceptance(
        "6", ok, f"{violations} bound violations, max TV at k=1000 {worst_far:.1e} (< 1e-8), {elapsed:.1f}s (< 120s)"
    )
    assert ok


def test_criterion_7_mu_insensitivity(acceptance):
    start = time.perf_counter()
    cfg = ExperimentConfig(n_paths=10, n_iters=300, T_list=(5000,), master_seed=MASTER_SEED)
    res = mu_sweep(cfg, (0.2, 0.5, 0.8), trajectories=sample_paths(cfg))
    elapsed = time.perf_counter() - start
    spread = res.spread(5000)
    ok = spread <= 1.05 and elapsed < 300
    finals = ", ".join(f"{v:.4f}" for v in res.final_errors(5000))
    acceptance("7", ok, f"final err [{finals}], max/min {spread:.4f} (<= 1.05), {elapsed:.1f}s (< 300s)")
    assert ok


def test_criterion_8_determinism(desk_run, tmp_path, acceptance):
    _, first, _ = desk_run
    run_experiment(DESK, tmp_path)
    names = sorted(p.name for p in first.iterdir())
    same = [n for n in names if (first / n).read_bytes() == (tmp_path / n).read_bytes()]
    ok = len(same) == len(names) and len(names) > 0
    acceptance("8", ok, f"{len(same)}/{len(names)} output files byte-identical on rerun")
    assert ok
