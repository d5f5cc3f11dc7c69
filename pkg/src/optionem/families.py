"""Concrete policy families: full conditional tables and the four-state
target-seeking family with three scalar parameters."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    LEFT,
    LEFTEND,
    RIGHT,
    RIGHTEND,
    TABULAR_FLOOR,
    FamilyKind,
    InfeasibleThetaError,
    PolicyFamily,
    Spaces,
    SufficientStats,
    Theta,
)

_SUM_TOL = 1e-10


def floor_simplex(weights: np.ndarray, floor: float = TABULAR_FLOOR) -> np.ndarray:
    """Maximize ``sum_i w_i log p_i`` over the simplex with ``p_i >= floor``.

    The KKT solution is ``p_i = max(w_i / lam, floor)``; found by clamping the
    smallest entries until the remaining mass is consistent. ``weights`` is
    processed along its last axis and must have a positive sum per slice.
    """
    w = np.asarray(weights, dtype=float)
    flat = w.reshape(-1, w.shape[-1])
    out = np.empty_like(flat)
    k = flat.shape[1]
    if floor * k >= 1.0:
        raise ValueError("floor too large for simplex dimension")
    for i, row in enumerate(flat):
        clamped = np.zeros(k, dtype=bool)
        while True:
            free = ~clamped
            budget = 1.0 - floor * clamped.sum()
            p = np.full(k, floor)
            p[free] = row[free] / row[free].sum() * budget
            newly = free & (p < floor)
            if not newly.any():
                break
            clamped |= newly
        out[i] = p
    return out.reshape(w.shape)


@dataclass(frozen=True)
class TabularFamily(PolicyFamily):
    """Every conditional pmf stored as a full table, entries floored at ``floor``."""

    floor: float = TABULAR_FLOOR

    kind = FamilyKind.TABULAR

    def shapes(self):
        sp = self.spaces
        return (
            (sp.n_states, sp.n_options),
            (sp.n_states, sp.n_options, sp.n_actions),
            (sp.n_states, sp.n_options, 2),
        )

    def check(self, theta: Theta) -> None:
        for name, arr, shape in zip(("hi", "lo", "b"), (theta.hi, theta.lo, theta.b), self.shapes()):
            if arr.shape != shape:
                raise InfeasibleThetaError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)) or arr.min() < self.floor * (1 - 1e-9):
                raise InfeasibleThetaError(f"{name} has entries below the floor {self.floor}")
            if np.max(np.abs(arr.sum(axis=-1) - 1.0)) > _SUM_TOL:
                raise InfeasibleThetaError(f"{name} rows do not sum to 1")

    def hi_table(self, theta):
        return theta.hi

    def lo_table(self, theta):
        return theta.lo

    def b_table(self, theta):
        return theta.b

    def make_theta(self, hi, lo, b) -> Theta:
        """Build a feasible parameter from arbitrary nonnegative tables."""
        tabs = []
        for arr in (hi, lo, b):
            arr = np.asarray(arr, dtype=float)
            tabs.append(floor_simplex(arr / arr.sum(axis=-1, keepdims=True), self.floor))
        return Theta(*tabs)

    def uniform_theta(self) -> Theta:
        return Theta(*(np.full(shape, 1.0 / shape[-1]) for shape in self.shapes()))

    def random_theta(self, rng: np.random.Generator, concentration: float = 1.0) -> Theta:
        return self.make_theta(*(rng.dirichlet(np.full(s[-1], concentration), size=s[:-1]) for s in self.shapes()))

    def maximize(self, stats: SufficientStats, theta_prev: Theta) -> Theta:
        blocks = []
        prevs = (None, None, None) if theta_prev is None else (theta_prev.hi, theta_prev.lo, theta_prev.b)
        for w, prev in zip((stats.hi, stats.lo, stats.b), prevs):
            mass = w.sum(axis=-1)
            live = mass > 0
            if prev is None:
                if not live.all():
                    raise ZeroDivisionError("conditional slice without posterior mass and no previous value")
                prev = np.empty(w.shape)
            out = np.array(prev, dtype=float)
            if live.any():
                out[live] = floor_simplex(w[live], self.floor)
            blocks.append(out)
        return Theta(*blocks)


@dataclass(frozen=True)
class TargetSeekingFamily(PolicyFamily):
    """Four-state, two-option, two-action family with scalar ``(hi, lo, b)``.

    * pi_hi(LEFTEND | s) = hi on states 1-2, 1 - hi on states 3-4
    * pi_lo(LEFT | s, LEFTEND) = pi_lo(RIGHT | s, RIGHTEND) = lo
    * pi_b(1 | s, LEFTEND) = b at state 1, 1 - b elsewhere;
      pi_b(1 | s, RIGHTEND) = b at state 4, 1 - b elsewhere
    """

    spaces: Spaces = Spaces(4, 2, 2)
    zeta: float = 0.1
    lower: float = 0.1
    upper: float = 0.9

    kind = FamilyKind.TARGET_SEEKING

    def __post_init__(self):
        super().__post_init__()
        if self.spaces != Spaces(4, 2, 2):
            raise ValueError("target-seeking family is fixed to 4 states, 2 actions, 2 options")
        if not 0.0 < self.lower <= self.upper < 1.0:
            raise ValueError("box must satisfy 0 < lower <= upper < 1")

    def check(self, theta: Theta) -> None:
        for name in ("hi", "lo", "b"):
            v = getattr(theta, name)
            if v.shape != ():
                raise InfeasibleThetaError(f"{name} must be a scalar")
            if not self.lower <= float(v) <= self.upper:
                raise InfeasibleThetaError(f"{name}={float(v)} outside [{self.lower}, {self.upper}]")

    def theta(self, hi: float, lo: float, b: float) -> Theta:
        t = Theta(hi, lo, b)
        self.check(t)
        return t

    def clamp(self, x: float) -> float:
        return float(min(max(x, self.lower), self.upper))

    def hi_table(self, theta):
        h = float(theta.hi)
        out = np.empty((4, 2))
        out[:2, LEFTEND] = h
        out[2:, LEFTEND] = 1.0 - h
        out[:, RIGHTEND] = 1.0 - out[:, LEFTEND]
        return out

    def lo_table(self, theta):
        p = float(theta.lo)
        out = np.empty((4, 2, 2))
        out[:, LEFTEND, LEFT] = p
        out[:, LEFTEND, RIGHT] = 1.0 - p
        out[:, RIGHTEND, RIGHT] = p
        out[:, RIGHTEND, LEFT] = 1.0 - p
        return out

    def b_table(self, theta):
        out = np.empty((4, 2, 2))
        event = self.termination_event()
        out[:, :, 1] = np.where(event, float(theta.b), 1.0 - float(theta.b))
        out[:, :, 0] = 1.0 - out[:, :, 1]
        return out

    @staticmethod
    def termination_event() -> np.ndarray:
        """``event[s, o_prev]``: the option has reached its target end state."""
        event = np.zeros((4, 2), dtype=bool)
        event[0, LEFTEND] = True
        event[3, RIGHTEND] = True
        return event

    def random_theta(self, rng: np.random.Generator) -> Theta:
        return Theta(*rng.uniform(self.lower, self.upper, size=3))

    def unconstrained_update(self, stats: SufficientStats) -> tuple[float, float, float]:
        """Ratios maximizing each block of the Q-function before clamping.

        ``nan`` marks a block with no posterior mass.
        """
        near = np.zeros(4, dtype=bool)
        near[:2] = True
        hi_num = stats.hi[near, LEFTEND].sum() + stats.hi[~near, RIGHTEND].sum()
        hi_den = stats.hi.sum()
        lo_num = stats.lo[:, LEFTEND, LEFT].sum() + stats.lo[:, RIGHTEND, RIGHT].sum()
        lo_den = stats.lo.sum()
        event = self.termination_event()
        b_num = stats.b[:, :, 1][event].sum() + stats.b[:, :, 0][~event].sum()
        b_den = stats.b.sum()
        return tuple(
            num / den if den > 0 else float("nan")
            for num, den in ((hi_num, hi_den), (lo_num, lo_den), (b_num, b_den))
        )

    def maximize(self, stats: SufficientStats, theta_prev: Theta) -> Theta:
        raw = self.unconstrained_update(stats)
        if theta_prev is None:
            if any(np.isnan(r) for r in raw):
                raise ZeroDivisionError("parameter block without posterior mass and no previous value")
            prev = raw
        else:
            prev = (float(theta_prev.hi), float(theta_prev.lo), float(theta_prev.b))
        return Theta(*(p if np.isnan(r) else self.clamp(r) for r, p in zip(raw, prev)))


THETA_STAR = (0.6, 0.7, 0.8)
THETA_INIT = (0.5, 0.6, 0.7)
