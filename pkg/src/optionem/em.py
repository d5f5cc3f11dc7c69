"""Q-function, exact M-steps and the Baum-Welch style EM loop."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ModelError, PolicyFamily, SufficientStats, Theta, as_prior
from .simulator import ObservationSequence
from .smoothing import SmoothingTable, marginal_log_likelihood, smooth


def sufficient_stats(family: PolicyFamily, tables: SmoothingTable, obs: ObservationSequence) -> SufficientStats:
    T = len(obs)
    if len(tables) != T or tables.gamma2.shape[0] != T - 1:
        raise ModelError(f"smoothing table of length {len(tables)} does not match observations of length {T}")
    sp = family.spaces
    s, a = obs.states, obs.actions
    hi = np.zeros((sp.n_states, sp.n_options))
    lo = np.zeros((sp.n_states, sp.n_options, sp.n_actions))
    pb = np.zeros((sp.n_states, sp.n_options, 2))
    np.add.at(hi, s, tables.gamma[:, :, 1])
    occupancy = tables.gamma.sum(axis=2)
    for act in range(sp.n_actions):
        sel = a == act
        np.add.at(lo[:, :, act], s[sel], occupancy[sel])
    np.add.at(pb, s[1:], tables.gamma2)
    return SufficientStats(hi, lo, pb, T)


def q_from_stats(family: PolicyFamily, theta_prime: Theta, stats: SufficientStats) -> float:
    hi, lo, pb = family.tables(theta_prime)
    total = (stats.b * np.log(pb)).sum() + (stats.lo * np.log(lo)).sum() + (stats.hi * np.log(hi)).sum()
    return float(total / stats.T)


def q_value(family: PolicyFamily, theta_prime: Theta, tables: SmoothingTable, obs: ObservationSequence) -> float:
    """Normalized Q-function: termination terms for t >= 2, low-level terms,
    and high-level terms weighted by the posterior of a fresh option draw,
    all divided by ``T``."""
    return q_from_stats(family, theta_prime, sufficient_stats(family, tables, obs))


def m_step(
    family: PolicyFamily,
    tables: SmoothingTable,
    obs: ObservationSequence,
    theta_prev: Optional[Theta] = None,
) -> Theta:
    """Exact maximizer of the Q-function over the family's constraint set.

    Conditional slices without posterior mass keep their value from
    ``theta_prev``; without it such a slice is an error.
    """
    return family.maximize(sufficient_stats(family, tables, obs), theta_prev)


@dataclass(frozen=True)
class EMConfig:
    n_iters: int
    mu: np.ndarray
    theta0: Theta
    early_stop_tol: float = 0.0

    def __post_init__(self):
        if self.n_iters < 1:
            raise ModelError("n_iters must be >= 1")
        if self.early_stop_tol < 0:
            raise ModelError("early_stop_tol must be >= 0")


@dataclass
class EMTrace:
    thetas: list = field(default_factory=list)
    q_values: list = field(default_factory=list)  # q_values[n-1] = Q(theta_n | theta_{n-1})
    log_marginals: list = field(default_factory=list)  # log_marginals[n] at theta_n
    stopped_at: int = 0

    def errors(self, theta_star: Theta) -> np.ndarray:
        return np.array([th.distance(theta_star) for th in self.thetas])

    def padded_thetas(self, n_iters: int) -> list:
        """Thetas for ``n = 0..n_iters``, repeating the last one after an early stop."""
        return self.thetas + [self.thetas[-1]] * (n_iters + 1 - len(self.thetas))

    def to_csv(self, path) -> None:
        width = self.thetas[0].vector().size
        if width == 3 and self.thetas[0].hi.ndim == 0:
            names = ["theta_hi", "theta_lo", "theta_b"]
        else:
            names = [f"theta_{i}" for i in range(width)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n", *names, "q_value", "log_marginal"])
            for n, th in enumerate(self.thetas):
                q = "" if n == 0 else f"{self.q_values[n - 1]:.12g}"
                w.writerow([n, *(f"{v:.12g}" for v in th.vector()), q, f"{self.log_marginals[n]:.12g}"])


def em_run(family: PolicyFamily, obs: ObservationSequence, config: EMConfig) -> EMTrace:
    mu = as_prior(config.mu, family.spaces.n_options)
    family.check(config.theta0)
    if len(obs) < 2:
        raise ModelError("observation sequence must have T >= 2")
    theta = config.theta0
    trace = EMTrace(thetas=[theta])
    for n in range(1, config.n_iters + 1):
        tables = smooth(family, theta, obs, mu)
        trace.log_marginals.append(tables.log_marginal)
        stats = sufficient_stats(family, tables, obs)
        new = family.maximize(stats, theta)
        trace.q_values.append(q_from_stats(family, new, stats))
        trace.thetas.append(new)
        trace.stopped_at = n
        step = new.distance(theta)
        theta = new
        if config.early_stop_tol > 0 and step < config.early_stop_tol:
            break
    trace.log_marginals.append(marginal_log_likelihood(family, theta, obs, mu))
    return trace
