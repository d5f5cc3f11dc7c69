"""Mixing constants and empirical forgetting / perturbation measurements."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .families import TabularFamily, TargetSeekingFamily
from .model import ModelError, PolicyFamily, Theta, uniform_prior, point_prior
from .simulator import ObservationSequence
from .smoothing import smooth, tv_distance, windowed_smooth


@dataclass(frozen=True)
class MixingConstants:
    c_b: float
    eps_b: float
    forgetting_rate: float


def mixing_constants(family: PolicyFamily) -> MixingConstants:
    """Uniform lower bound ``c_b`` on termination probabilities over the whole
    parameter set, ``eps_b = c_b / 2`` and the one-step contraction rate
    ``1 - eps_b**2 * zeta / |O|``."""
    if isinstance(family, TargetSeekingFamily):
        # min(theta_b, 1 - theta_b) over the box is attained at a corner
        c_b = min(family.lower, 1.0 - family.upper)
    elif isinstance(family, TabularFamily):
        c_b = family.floor
    else:
        raise ModelError(f"no mixing constant for family {type(family).__name__}")
    eps_b = c_b / 2.0
    rate = 1.0 - eps_b**2 * family.zeta / family.spaces.n_options
    return MixingConstants(c_b, eps_b, rate)


def forgetting_bound(rate: float, k: int, T: int, t: int) -> float:
    """``rate**k + rate**(T + k - t)`` for 1-based core position ``t``."""
    return rate**k + rate ** (T + k - t)


@dataclass
class ForgettingReport:
    rows: list = field(default_factory=list)  # (k, t, measured, bound)

    @property
    def violations(self) -> list:
        return [r for r in self.rows if r[2] > r[3]]

    def max_tv(self, k: int) -> float:
        return max(r[2] for r in self.rows if r[0] == k)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "t", "measured", "bound"])
            for k, t, m, b in self.rows:
                w.writerow([k, t, f"{m:.12g}", f"{b:.12g}"])


def tv_forgetting_experiment(
    family: PolicyFamily,
    theta: Theta,
    long_obs: ObservationSequence,
    t_range: tuple[int, int],
    k_list,
    priors=None,
) -> ForgettingReport:
    """Compare smoothing on the core window ``t_range`` (0-based, half-open)
    under two window-head priors, for each extension radius ``k``.

    Default priors are point masses on the first and last option.
    """
    n_opt = family.spaces.n_options
    if priors is None:
        priors = (point_prior(0, n_opt), point_prior(n_opt - 1, n_opt))
    start, stop = t_range
    T = stop - start
    if start - max(k_list) < 0 or stop + max(k_list) > len(long_obs):
        raise ModelError("observations too short for the largest k")
    rate = mixing_constants(family).forgetting_rate
    report = ForgettingReport()
    for k in k_list:
        g1 = windowed_smooth(family, theta, long_obs, t_range, k, priors[0]).gamma
        g2 = windowed_smooth(family, theta, long_obs, t_range, k, priors[1]).gamma
        tv = tv_distance(g1, g2)
        for i in range(T):
            report.rows.append((int(k), i + 1, float(tv[i]), forgetting_bound(rate, k, T, i + 1)))
    return report


@dataclass
class PerturbationReport:
    delta_norm: float
    tv: np.ndarray

    @property
    def max_tv(self) -> float:
        return float(self.tv.max())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "tv", "delta_norm"])
            for i, v in enumerate(self.tv):
                w.writerow([i + 1, f"{v:.12g}", f"{self.delta_norm:.12g}"])


def parameter_perturbation_experiment(
    family: PolicyFamily, theta: Theta, theta_hat: Theta, obs: ObservationSequence, mu=None
) -> PerturbationReport:
    """Per-step TV between smoothing distributions at ``theta`` and ``theta_hat``."""
    if mu is None:
        mu = uniform_prior(family.spaces.n_options)
    g = smooth(family, theta, obs, mu).gamma
    g_hat = smooth(family, theta_hat, obs, mu).gamma
    return PerturbationReport(theta.distance(theta_hat), tv_distance(g, g_hat))


def perturbation_sweep(
    family: PolicyFamily, theta: Theta, direction: Theta, scales, obs: ObservationSequence, mu=None
) -> list[tuple[float, float, float]]:
    """``(delta_norm, max_tv, max_tv / delta_norm)`` along ``theta + scale * direction``."""
    out = []
    for scale in scales:
        theta_hat = Theta(
            theta.hi + scale * direction.hi, theta.lo + scale * direction.lo, theta.b + scale * direction.b
        )
        rep = parameter_perturbation_experiment(family, theta, theta_hat, obs, mu)
        out.append((rep.delta_norm, rep.max_tv, rep.max_tv / rep.delta_norm))
    return out
