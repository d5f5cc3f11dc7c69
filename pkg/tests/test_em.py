import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import symmetric_tabular
from helpers import grid_best_target, simplex_grid, target_instance
from optionem.em import EMConfig, em_run, m_step, q_from_stats, q_value, sufficient_stats
from optionem.families import TabularFamily, TargetSeekingFamily
from optionem.model import LEFTEND, RIGHTEND, ModelError, Spaces, SufficientStats, Theta, uniform_prior
from optionem.oracle import oracle_q_value, random_instance
from optionem.simulator import ObservationSequence, make_grid_env, make_rng, sample_stationary
from optionem.smoothing import SmoothingTable, smooth

MU_RIGHT = np.array([0.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_q_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    fam, th, obs, mu, env = random_instance(rng, max_T=6)
    th_prime = fam.random_theta(rng)
    tab = smooth(fam, th, obs, mu)
    assert q_value(fam, th_prime, tab, obs) == pytest.approx(oracle_q_value(fam, th_prime, th, obs, mu), abs=1e-9)


def test_q_target_matches_oracle():
    rng = np.random.default_rng(4)
    fam = TargetSeekingFamily()
    obs = ObservationSequence([0, 2, 3, 3, 1], [1, 1, 1, 0, 0])
    th = fam.random_theta(rng)
    th_prime = fam.random_theta(rng)
    tab = smooth(fam, th, obs, MU_RIGHT)
    assert q_value(fam, th_prime, tab, obs) == pytest.approx(oracle_q_value(fam, th_prime, th, obs, MU_RIGHT), abs=1e-12)


def test_q_symmetric_closed_form():
    fam, th = symmetric_tabular()
    rng = np.random.default_rng(3)
    T = 25
    obs = ObservationSequence(rng.integers(0, 3, T), rng.integers(0, 2, T))
    tab = smooth(fam, th, obs, uniform_prior(3))
    lo = th.lo[:, 0, :]
    expected = ((T - 1) * np.log(0.5) + np.log(lo[obs.states, obs.actions]).sum() + T * 0.5 * np.log(1 / 3)) / T
    assert q_value(fam, th, tab, obs) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_q_relabeling_invariance(seed):
    rng = np.random.default_rng(seed)
    fam, th, obs, mu, env = random_instance(rng)
    th_prime = fam.random_theta(rng)
    tab = smooth(fam, th, obs, mu)
    perm = rng.permutation(fam.spaces.n_options)
    th_perm = Theta(th_prime.hi[:, perm], th_prime.lo[:, perm], th_prime.b[:, perm])
    tab_perm = SmoothingTable(tab.gamma[:, perm], tab.gamma2[:, perm], tab.log_marginal)
    assert q_value(fam, th_perm, tab_perm, obs) == pytest.approx(q_value(fam, th_prime, tab, obs), abs=1e-12)


def test_m_step_dominance():
    rng = make_rng(99)
    for i in range(100):
        if i % 2:
            fam, th, obs, mu, env = random_instance(rng)
        else:
            fam, th, obs = target_instance(rng)
            mu = MU_RIGHT
        tab = smooth(fam, th, obs, mu)
        new = m_step(fam, tab, obs, th)
        fam.check(new)
        assert q_value(fam, new, tab, obs) >= q_value(fam, th, tab, obs) - 1e-12


def test_target_m_step_grid():
    rng = make_rng(5)
    for _ in range(10):
        fam, th, obs = target_instance(rng, T=150)
        tab = smooth(fam, th, obs, MU_RIGHT)
        new = m_step(fam, tab, obs, th)
        stats = sufficient_stats(fam, tab, obs)
        best = grid_best_target(fam, stats, new)
        assert np.all(np.abs(best - new.vector()) <= 1e-3 + 1e-12)
        assert q_from_stats(fam, new, stats) >= q_from_stats(fam, Theta(*best), stats) - 1e-12


def test_tabular_m_step_grid():
    rng = make_rng(6)
    for _ in range(10):
        fam, th, obs, mu, env = random_instance(rng)
        tab = smooth(fam, th, obs, mu)
        new = m_step(fam, tab, obs, th)
        stats = sufficient_stats(fam, tab, obs)
        for w_block, p_block in ((stats.hi, new.hi), (stats.lo, new.lo), (stats.b, new.b)):
            k = w_block.shape[-1]
            if k == 1:
                continue
            grid = simplex_grid(k, fam.floor)
            logs = np.log(np.maximum(grid, 1e-300))
            for w, p in zip(w_block.reshape(-1, k), p_block.reshape(-1, k)):
                if w.sum() == 0:
                    continue
                vals = logs @ w
                best = grid[int(np.argmax(vals))]
                assert np.max(np.abs(best - p)) <= 1e-3 + 1e-9
                assert w @ np.log(p) >= vals.max() - 1e-12


def test_target_closed_form_ratios():
    fam = TargetSeekingFamily()
    obs = sample_stationary(fam, Theta(0.6, 0.7, 0.8), make_grid_env(), 200, seed=1).observations()
    tab = smooth(fam, Theta(0.5, 0.6, 0.7), obs, MU_RIGHT)
    s = obs.states
    fresh = tab.gamma[:, :, 1]
    near = s <= 1
    hi = (fresh[near, LEFTEND].sum() + fresh[~near, RIGHTEND].sum()) / fresh.sum()
    stats = sufficient_stats(fam, tab, obs)
    assert fam.unconstrained_update(stats)[0] == pytest.approx(hi, abs=1e-12)


def test_target_clamping():
    fam = TargetSeekingFamily()

    def stats_with_hi(p_left):
        hi = np.zeros((4, 2))
        hi[0] = [p_left, 1 - p_left]
        lo = np.full((4, 2, 2), 1.0)
        b = np.full((4, 2, 2), 1.0)
        return SufficientStats(hi, lo, b, 10)

    prev = Theta(0.5, 0.5, 0.5)
    assert float(fam.maximize(stats_with_hi(0.95), prev).hi) == pytest.approx(0.9)
    assert float(fam.maximize(stats_with_hi(0.05), prev).hi) == pytest.approx(0.1)
    assert float(fam.maximize(stats_with_hi(0.3), prev).hi) == pytest.approx(0.3)
    assert float(fam.maximize(stats_with_hi(0.3), prev).lo) == pytest.approx(0.5)


def test_dead_block_keeps_previous():
    fam = TargetSeekingFamily()
    stats = SufficientStats(np.zeros((4, 2)), np.full((4, 2, 2), 1.0), np.full((4, 2, 2), 1.0), 5)
    prev = Theta(0.42, 0.5, 0.5)
    assert float(fam.maximize(stats, prev).hi) == 0.42
    with pytest.raises(ZeroDivisionError):
        fam.maximize(stats, None)


def test_tabular_dead_slice():
    fam = TabularFamily(Spaces(2, 2, 2), zeta=0.2)
    prev = fam.random_theta(np.random.default_rng(0))
    hi = np.array([[2.0, 1.0], [0.0, 0.0]])
    stats = SufficientStats(hi, np.ones((2, 2, 2)), np.ones((2, 2, 2)), 3)
    new = fam.maximize(stats, prev)
    assert np.array_equal(new.hi[1], prev.hi[1])
    assert np.allclose(new.hi[0], [2 / 3, 1 / 3])
    with pytest.raises(ZeroDivisionError):
        fam.maximize(stats, None)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_tabular_rows_on_simplex(seed):
    rng = np.random.default_rng(seed)
    fam, th, obs, mu, env = random_instance(rng)
    new = m_step(fam, smooth(fam, th, obs, mu), obs, th)
    for arr in (new.hi, new.lo, new.b):
        assert np.all(np.abs(arr.sum(axis=-1) - 1.0) <= 1e-12)
        assert arr.min() >= fam.floor * (1 - 1e-12)


def test_single_iteration(target):
    obs = sample_stationary(target, Theta(0.6, 0.7, 0.8), make_grid_env(), 500, seed=2).observations()
    th0 = Theta(0.5, 0.6, 0.7)
    trace = em_run(target, obs, EMConfig(1, MU_RIGHT, th0))
    expected = m_step(target, smooth(target, th0, obs, MU_RIGHT), obs, th0)
    assert trace.thetas[1] == expected
    assert len(trace.thetas) == 2 and len(trace.q_values) == 1 and len(trace.log_marginals) == 2


def test_fixed_point_trace_constant():
    fam, th = symmetric_tabular()
    rng = np.random.default_rng(8)
    T = 400
    s = rng.integers(0, 3, T)
    a = rng.integers(0, 2, T)
    freq = np.stack([np.bincount(a[s == k], minlength=2) / (s == k).sum() for k in range(3)])
    th = Theta(th.hi, np.repeat(freq[:, None, :], 3, axis=1), th.b)
    fam.check(th)
    trace = em_run(fam, ObservationSequence(s, a), EMConfig(5, uniform_prior(3), th))
    for t in trace.thetas:
        assert t.distance(th) < 1e-12


def test_likelihood_monotone(target):
    obs = sample_stationary(target, Theta(0.6, 0.7, 0.8), make_grid_env(), 2000, seed=6).observations()
    trace = em_run(target, obs, EMConfig(30, MU_RIGHT, Theta(0.5, 0.6, 0.7)))
    assert np.all(np.diff(trace.log_marginals) >= -1e-8)


def test_majority_improve(target):
    theta_star = Theta(0.6, 0.7, 0.8)
    th0 = Theta(0.5, 0.6, 0.7)
    better = 0
    for seed in range(5):
        obs = sample_stationary(target, theta_star, make_grid_env(), 5000, seed=seed).observations()
        trace = em_run(target, obs, EMConfig(50, MU_RIGHT, th0))
        better += trace.thetas[-1].distance(theta_star) < th0.distance(theta_star)
    assert better >= 3


def test_early_stop(target):
    obs = sample_stationary(target, Theta(0.6, 0.7, 0.8), make_grid_env(), 1000, seed=6).observations()
    trace = em_run(target, obs, EMConfig(500, MU_RIGHT, Theta(0.5, 0.6, 0.7), early_stop_tol=1e-4))
    assert trace.stopped_at < 500
    assert len(trace.padded_thetas(500)) == 501


def test_trace_csv(tmp_path, target):
    obs = sample_stationary(target, Theta(0.6, 0.7, 0.8), make_grid_env(), 300, seed=6).observations()
    trace = em_run(target, obs, EMConfig(3, MU_RIGHT, Theta(0.5, 0.6, 0.7)))
    p = tmp_path / "trace.csv"
    trace.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "n,theta_hi,theta_lo,theta_b,q_value,log_marginal"
    assert len(lines) == 5


def test_em_errors(target):
    obs = ObservationSequence([0], [0])
    with pytest.raises(ModelError):
        em_run(target, obs, EMConfig(1, MU_RIGHT, Theta(0.5, 0.6, 0.7)))
    with pytest.raises(ModelError):
        EMConfig(0, MU_RIGHT, Theta(0.5, 0.6, 0.7))
    with pytest.raises(ModelError):
        sufficient_stats(target, smooth(target, Theta(0.5, 0.6, 0.7), ObservationSequence([0, 1], [0, 1]), MU_RIGHT),
                         ObservationSequence([0, 1, 2], [0, 1, 1]))
