"""Shared builders for the EM and acceptance tests."""
import numpy as np

from optionem.em import q_from_stats
from optionem.families import TargetSeekingFamily
from optionem.model import Theta
from optionem.simulator import make_grid_env, sample_stationary


def target_instance(rng, T=300):
    fam = TargetSeekingFamily()
    th = fam.random_theta(rng)
    obs = sample_stationary(fam, th, make_grid_env(), T, burn_in=200, seed=int(rng.integers(2**63))).observations()
    return fam, th, obs


def grid_best_target(fam, stats, new):
    """Coordinate grids over the box; the Q-function separates over (hi, lo, b)."""
    grid = np.round(np.arange(fam.lower, fam.upper + 5e-4, 1e-3), 10)
    best = []
    for k in range(3):
        vals = []
        for g in grid:
            v = list(new.vector())
            v[k] = g
            vals.append(q_from_stats(fam, Theta(*v), stats))
        best.append(grid[int(np.argmax(vals))])
    return np.array(best)


def simplex_grid(k, floor, pitch=1e-3):
    ticks = np.arange(0.0, 1.0 + pitch / 2, pitch)
    if k == 2:
        p = np.stack([ticks, 1 - ticks], axis=1)
    elif k == 3:
        a, b = np.meshgrid(ticks, ticks, indexing="ij")
        a, b = a.ravel(), b.ravel()
        p = np.stack([a, b, 1 - a - b], axis=1)
    else:
        raise ValueError(k)
    return p[np.all(p >= floor - 1e-12, axis=1)]
