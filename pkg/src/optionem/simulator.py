"""Sampling expert trajectories from the hierarchical decision process.

Randomness comes from numpy's Philox-4x64 counter-based generator. A
trajectory seed is a 64-bit integer; per-path seeds are derived from a master
seed with :func:`path_seed` (``SeedSequence`` spawn keys), so every path has
an independent, platform-stable stream.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numba
import numpy as np

from .model import Environment, ModelError, PolicyFamily, Theta

DEFAULT_BURN_IN = 10_000
# pre-burn-in start: option index 1, first state
DEFAULT_START = (1, 0)


@dataclass(frozen=True)
class ObservationSequence:
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.states, dtype=np.int64)
        a = np.ascontiguousarray(self.actions, dtype=np.int64)
        if s.ndim != 1 or s.shape != a.shape:
            raise ModelError("states and actions must be 1-d sequences of equal length")
        s.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    def __len__(self):
        return len(self.states)

    def window(self, start: int, stop: int) -> "ObservationSequence":
        """Observations at 0-based times ``start <= t < stop``."""
        if start < 0 or stop > len(self) or stop <= start:
            raise ModelError(f"window [{start}, {stop}) outside observations of length {len(self)}")
        return ObservationSequence(self.states[start:stop], self.actions[start:stop])


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    options: np.ndarray
    terminations: np.ndarray
    o0: int
    seed: int

    def __len__(self):
        return len(self.states)

    def observations(self) -> ObservationSequence:
        return ObservationSequence(self.states, self.actions)

    def head(self, T: int) -> "Trajectory":
        return Trajectory(
            self.states[:T], self.actions[:T], self.options[:T], self.terminations[:T], self.o0, self.seed
        )

    def to_csv(self, path, hidden: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "s", "a", "o", "b"] if hidden else ["t", "s", "a"])
            for t in range(len(self)):
                row = [t + 1, int(self.states[t]), int(self.actions[t])]
                if hidden:
                    row += [int(self.options[t]), int(self.terminations[t])]
                w.writerow(row)


def read_observations_csv(path) -> ObservationSequence:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ModelError(f"{path}: no observations")
    return ObservationSequence([int(r["s"]) for r in rows], [int(r["a"]) for r in rows])


def make_grid_env(n_states: int = 4) -> Environment:
    """Grid where RIGHT moves uniformly to ``{s, ..., last}`` and LEFT to ``{first, ..., s}``."""
    p = np.zeros((n_states, 2, n_states))
    for s in range(n_states):
        p[s, 0, : s + 1] = 1.0 / (s + 1)
        p[s, 1, s:] = 1.0 / (n_states - s)
    return Environment(p)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def path_seed(master_seed: int, index: int, stream: int = 0) -> int:
    """64-bit seed for path ``index`` derived from ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(stream), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@numba.njit(cache=True)
def _draw(cdf_row, u):
    n = cdf_row.shape[0]
    for j in range(n - 1):
        if u < cdf_row[j]:
            return j
    return n - 1


@numba.njit(cache=True)
def _simulate(hi, lo, pb, trans, zeta, o_prev, s, u, out_s, out_a, out_o, out_b):
    n_opt = hi.shape[1]
    bar = np.empty(n_opt)
    cdf = np.empty(n_opt)
    for t in range(u.shape[0]):
        b = 1 if u[t, 0] < pb[s, o_prev, 1] else 0
        if b == 1:
            for o in range(n_opt):
                bar[o] = hi[s, o]
        else:
            for o in range(n_opt):
                bar[o] = zeta / n_opt
            bar[o_prev] += 1.0 - zeta
        acc = 0.0
        for o in range(n_opt):
            acc += bar[o]
            cdf[o] = acc
        o = _draw(cdf, u[t, 1])
        a = _draw(np.cumsum(lo[s, o]), u[t, 2])
        out_s[t] = s
        out_a[t] = a
        out_o[t] = o
        out_b[t] = b
        s = _draw(np.cumsum(trans[s, a]), u[t, 3])
        o_prev = o


def _run(family, theta, env, o0, s1, n_steps, rng):
    sp = family.spaces
    if env.n_states != sp.n_states or env.n_actions != sp.n_actions:
        raise ModelError("environment does not match the family's spaces")
    if not (0 <= o0 < sp.n_options and 0 <= s1 < sp.n_states):
        raise ModelError("initial (o0, s1) out of range")
    hi, lo, pb = family.tables(theta)
    u = rng.random((n_steps, 4))
    out = [np.empty(n_steps, dtype=np.int64) for _ in range(4)]
    _simulate(
        np.ascontiguousarray(hi), np.ascontiguousarray(lo), np.ascontiguousarray(pb),
        np.ascontiguousarray(env.transition), float(family.zeta), int(o0), int(s1), u, *out,
    )
    return out


def sample_trajectory(
    family: PolicyFamily, theta: Theta, env: Environment, o0: int, s1: int, T: int, seed: int
) -> Trajectory:
    """Sample ``T`` steps starting from ``(O_0, S_1) = (o0, s1)``."""
    if T < 2:
        raise ModelError("T must be >= 2")
    s, a, o, b = _run(family, theta, env, o0, s1, T, make_rng(seed))
    return Trajectory(s, a, o, b, int(o0), int(seed))


def sample_stationary(
    family: PolicyFamily,
    theta: Theta,
    env: Environment,
    T: int,
    burn_in: int = DEFAULT_BURN_IN,
    seed: int = 0,
    start: tuple[int, int] = DEFAULT_START,
) -> Trajectory:
    """Simulate ``burn_in + T`` steps and keep the last ``T``.

    The returned ``o0`` is the option active just before the kept window, so
    the result is a valid trajectory on its own.
    """
    if burn_in < 0:
        raise ModelError("burn_in must be >= 0")
    if T < 2:
        raise ModelError("T must be >= 2")
    o0, s1 = start
    s, a, o, b = _run(family, theta, env, o0, s1, burn_in + T, make_rng(seed))
    head_option = int(o[burn_in - 1]) if burn_in > 0 else int(o0)
    return Trajectory(s[burn_in:], a[burn_in:], o[burn_in:], b[burn_in:], head_option, int(seed))
