"""Options-with-failure policy model.

Indexing conventions used throughout the package:

* states, actions and options are 0-based integers;
* for the four-state target-seeking example, state ``k`` (1..4 on the grid)
  is index ``k - 1``, options ``LEFTEND``/``RIGHTEND`` are 0/1 and actions
  ``LEFT``/``RIGHT`` are 0/1;
* termination indicator ``b`` is 0 (continue) or 1 (terminate).

Conditional tables produced by a family are laid out as

* ``hi[s, o]``        = pi_hi(o | s)
* ``lo[s, o, a]``     = pi_lo(a | s, o)
* ``b[s, o_prev, b]`` = pi_b(b | s, o_prev)
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

LEFTEND, RIGHTEND = 0, 1
LEFT, RIGHT = 0, 1

TABULAR_FLOOR = 1e-6


class ModelError(ValueError):
    """Raised for out-of-range indices or malformed model inputs."""


class InfeasibleThetaError(ModelError):
    """Raised when a parameter lies outside its family's constraint set."""


@dataclass(frozen=True)
class Spaces:
    n_states: int
    n_actions: int
    n_options: int

    def __post_init__(self):
        for name in ("n_states", "n_actions", "n_options"):
            if int(getattr(self, name)) < 1:
                raise ModelError(f"{name} must be >= 1")


@dataclass(frozen=True, eq=False)
class Theta:
    """Parameter triple ``(hi, lo, b)``.

    Scalar families store 0-d arrays; tabular families store the full
    conditional tables described in the module docstring.
    """

    hi: np.ndarray
    lo: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        for name in ("hi", "lo", "b"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def vector(self) -> np.ndarray:
        return np.concatenate([self.hi.ravel(), self.lo.ravel(), self.b.ravel()])

    def distance(self, other: "Theta") -> float:
        return float(np.linalg.norm(self.vector() - other.vector()))

    def __eq__(self, other):
        if not isinstance(other, Theta):
            return NotImplemented
        return all(
            getattr(self, k).shape == getattr(other, k).shape
            and np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("hi", "lo", "b")
        )

    def __repr__(self):
        if self.hi.ndim == 0:
            return f"Theta(hi={float(self.hi):.6g}, lo={float(self.lo):.6g}, b={float(self.b):.6g})"
        return f"Theta(hi{self.hi.shape}, lo{self.lo.shape}, b{self.b.shape})"


@dataclass(frozen=True)
class Environment:
    """Transition kernel ``transition[s, a, s'] = P(s' | s, a)``."""

    transition: np.ndarray

    def __post_init__(self):
        p = np.array(self.transition, dtype=float)
        if p.ndim != 3 or p.shape[0] != p.shape[2]:
            raise ModelError(f"transition must have shape (S, A, S), got {p.shape}")
        if np.any(p < 0) or not np.allclose(p.sum(axis=2), 1.0, rtol=0, atol=1e-12):
            raise ModelError("transition rows must be nonnegative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "transition", p)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def as_prior(weights, n_options: int) -> np.ndarray:
    """Validate a pmf over options (the prior mu(. | s_1))."""
    mu = np.asarray(weights, dtype=float)
    if mu.shape != (n_options,):
        raise ModelError(f"prior must have shape ({n_options},), got {mu.shape}")
    if np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-12:
        raise ModelError("prior must be a pmf over options")
    return mu


def uniform_prior(n_options: int) -> np.ndarray:
    return np.full(n_options, 1.0 / n_options)


def point_prior(option: int, n_options: int) -> np.ndarray:
    mu = np.zeros(n_options)
    mu[option] = 1.0
    return mu


class FamilyKind(enum.Enum):
    TABULAR = "tabular"
    TARGET_SEEKING = "target_seeking"


@dataclass(frozen=True)
class PolicyFamily:
    """Base class for parameterized options-with-failure policies.

    Subclasses provide the three conditional tables for a given ``Theta``
    and an exact maximizer of the Q-function (``maximize``).
    """

    spaces: Spaces
    zeta: float

    kind = None

    def __post_init__(self):
        if not 0.0 < self.zeta < 1.0:
            raise ModelError(f"zeta must lie in (0, 1), got {self.zeta}")

    # -- subclass hooks -------------------------------------------------
    def check(self, theta: Theta) -> None:
        raise NotImplementedError

    def hi_table(self, theta: Theta) -> np.ndarray:
        raise NotImplementedError

    def lo_table(self, theta: Theta) -> np.ndarray:
        raise NotImplementedError

    def b_table(self, theta: Theta) -> np.ndarray:
        raise NotImplementedError

    def maximize(self, stats: "SufficientStats", theta_prev: Theta) -> Theta:
        raise NotImplementedError

    # -- shared ---------------------------------------------------------
    def tables(self, theta: Theta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        self.check(theta)
        return self.hi_table(theta), self.lo_table(theta), self.b_table(theta)

    def bar_hi_table(self, theta: Theta) -> np.ndarray:
        """``out[s, o_prev, b, o]`` = failure-augmented high-level kernel."""
        n_opt = self.spaces.n_options
        hi = self.hi_table(theta)
        n_s = hi.shape[0]
        out = np.empty((n_s, n_opt, 2, n_opt))
        stay = (1.0 - self.zeta) * np.eye(n_opt) + self.zeta / n_opt
        out[:, :, 0, :] = stay[None, :, :]
        out[:, :, 1, :] = hi[:, None, :]
        return out


@dataclass(frozen=True)
class SufficientStats:
    """Posterior-weighted counts that fully determine the Q-function.

    * ``hi[s, o]``        sum_t 1[s_t = s] gamma_t(o, b=1)
    * ``lo[s, o, a]``     sum_t 1[s_t = s, a_t = a] sum_b gamma_t(o, b)
    * ``b[s, o_prev, b]`` sum_{t>=2} 1[s_t = s] gamma2_t(o_prev, b)
    * ``T``               sequence length (the Q-function normalizer)
    """

    hi: np.ndarray
    lo: np.ndarray
    b: np.ndarray
    T: int


def _check_index(value, n, name):
    if not (0 <= int(value) < n) or int(value) != value:
        raise ModelError(f"{name}={value} out of range [0, {n})")


def eval_pi_hi(family: PolicyFamily, theta: Theta, o: int, s: int) -> float:
    sp = family.spaces
    _check_index(o, sp.n_options, "o")
    _check_index(s, sp.n_states, "s")
    family.check(theta)
    return float(family.hi_table(theta)[s, o])


def eval_pi_lo(family: PolicyFamily, theta: Theta, a: int, s: int, o: int) -> float:
    sp = family.spaces
    _check_index(a, sp.n_actions, "a")
    _check_index(s, sp.n_states, "s")
    _check_index(o, sp.n_options, "o")
    family.check(theta)
    return float(family.lo_table(theta)[s, o, a])


def eval_pi_b(family: PolicyFamily, theta: Theta, b: int, s: int, o: int) -> float:
    """pi_b(b | s, o) where ``o`` is the option active before the decision."""
    sp = family.spaces
    _check_index(b, 2, "b")
    _check_index(s, sp.n_states, "s")
    _check_index(o, sp.n_options, "o")
    family.check(theta)
    return float(family.b_table(theta)[s, o, b])


def eval_bar_pi_hi(
    family: PolicyFamily, theta: Theta, o_t: int, s: int, o_prev: int, b: int
) -> float:
    sp = family.spaces
    _check_index(o_t, sp.n_options, "o_t")
    _check_index(o_prev, sp.n_options, "o_prev")
    _check_index(b, 2, "b")
    if b == 1:
        return eval_pi_hi(family, theta, o_t, s)
    _check_index(s, sp.n_states, "s")
    n_opt = sp.n_options
    if o_t == o_prev:
        return 1.0 - family.zeta + family.zeta / n_opt
    return family.zeta / n_opt


def joint_factor_h(
    family: PolicyFamily, theta: Theta, o_prev: int, s: int, a: int, o: int, b: int
) -> float:
    """pi_b(b | s, o_prev) * bar_pi_hi(o | s, o_prev, b) * pi_lo(a | s, o)."""
    return (
        eval_pi_b(family, theta, b, s, o_prev)
        * eval_bar_pi_hi(family, theta, o, s, o_prev, b)
        * eval_pi_lo(family, theta, a, s, o)
    )


def step_factors(family: PolicyFamily, theta: Theta, states, actions) -> np.ndarray:
    """Vectorized joint factor along a sequence.

    Returns ``h[t, o_prev, b, o]`` for every time step (0-based ``t``).
    """
    states = np.asarray(states, dtype=np.intp)
    actions = np.asarray(actions, dtype=np.intp)
    hi, lo, pb = family.tables(theta)
    bar = family.bar_hi_table(theta)
    plo = lo[states, :, actions]  # (T, O)
    return pb[states][:, :, :, None] * bar[states] * plo[:, None, None, :]
