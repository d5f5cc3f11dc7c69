"""Forward-backward smoothing over the latent ``(option, termination)`` pairs.

Messages are stored per time step as normalized pmfs over ``O x {0, 1}``
together with the log of the normalizer removed at that step, so the
unscaled quantities can be reconstructed exactly:

* unscaled forward  = ``alpha[t] * exp(sum(log_norm[:t+1]))``
* unscaled backward = ``beta[t]  * exp(sum(log_norm[t:]))``

The per-step factor is ``h[t, o_prev, b, o]`` from :func:`model.step_factors`.
Environment transition probabilities are constant across latent paths and
are left out of every likelihood computed here.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .model import ModelError, PolicyFamily, Theta, as_prior, step_factors, uniform_prior
from .simulator import ObservationSequence


@dataclass(frozen=True)
class MessageTable:
    values: np.ndarray  # (T, O, 2)
    log_norm: np.ndarray  # (T,)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class SmoothingTable:
    """Posterior marginals.

    ``gamma[i]`` is the law of ``(O_t, B_t)`` at time ``t = i + 1``;
    ``gamma2[i]`` the law of ``(O_{t-1}, B_t)`` at time ``t = i + 2``.
    """

    gamma: np.ndarray
    gamma2: np.ndarray
    log_marginal: float
    forward: Optional[MessageTable] = None
    backward: Optional[MessageTable] = None

    def __len__(self):
        return self.gamma.shape[0]

    def to_csv(self, path) -> None:
        T, n_opt, _ = self.gamma.shape
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "o", "b", "gamma", "gamma2"])
            for i in range(T):
                for o in range(n_opt):
                    for b in range(2):
                        g2 = "" if i == 0 else f"{self.gamma2[i - 1, o, b]:.12g}"
                        w.writerow([i + 1, o, b, f"{self.gamma[i, o, b]:.12g}", g2])


@numba.njit(cache=True)
def _forward(h, mu, alpha, log_norm):
    T, n_opt = h.shape[0], h.shape[1]
    prev = mu.copy()
    for t in range(T):
        c = 0.0
        for o in range(n_opt):
            for b in range(2):
                acc = 0.0
                for op in range(n_opt):
                    acc += prev[op] * h[t, op, b, o]
                alpha[t, o, b] = acc
                c += acc
        if not (c > 0.0) or not np.isfinite(c):
            return t
        for o in range(n_opt):
            alpha[t, o, 0] /= c
            alpha[t, o, 1] /= c
            prev[o] = alpha[t, o, 0] + alpha[t, o, 1]
        log_norm[t] = np.log(c)
    return -1


@numba.njit(cache=True)
def _backward(h, beta, log_norm):
    T, n_opt = h.shape[0], h.shape[1]
    init = 1.0 / (2 * n_opt)
    for o in range(n_opt):
        beta[T - 1, o, 0] = init
        beta[T - 1, o, 1] = init
    log_norm[T - 1] = np.log(2.0 * n_opt)
    for t in range(T - 2, -1, -1):
        d = 0.0
        for o in range(n_opt):
            acc = 0.0
            for bn in range(2):
                for on in range(n_opt):
                    acc += h[t + 1, o, bn, on] * beta[t + 1, on, bn]
            # the future does not depend on the current termination indicator
            beta[t, o, 0] = acc
            beta[t, o, 1] = acc
            d += 2.0 * acc
        if not (d > 0.0) or not np.isfinite(d):
            return t
        for o in range(n_opt):
            beta[t, o, 0] /= d
            beta[t, o, 1] /= d
        log_norm[t] = np.log(d)
    return -1


@numba.njit(cache=True)
def _combine(h, alpha, beta, gamma, gamma2):
    T, n_opt = h.shape[0], h.shape[1]
    for t in range(T):
        z = 0.0
        for o in range(n_opt):
            for b in range(2):
                v = alpha[t, o, b] * beta[t, o, b]
                gamma[t, o, b] = v
                z += v
        for o in range(n_opt):
            gamma[t, o, 0] /= z
            gamma[t, o, 1] /= z
    for t in range(1, T):
        z = 0.0
        for op in range(n_opt):
            a_prev = alpha[t - 1, op, 0] + alpha[t - 1, op, 1]
            for b in range(2):
                acc = 0.0
                for o in range(n_opt):
                    acc += h[t, op, b, o] * beta[t, o, b]
                v = acc * a_prev
                gamma2[t - 1, op, b] = v
                z += v
        for op in range(n_opt):
            gamma2[t - 1, op, 0] /= z
            gamma2[t - 1, op, 1] /= z


def _check_obs(family: PolicyFamily, obs: ObservationSequence):
    if len(obs) < 2:
        raise ModelError("observation sequence must have T >= 2")
    sp = family.spaces
    if obs.states.min() < 0 or obs.states.max() >= sp.n_states:
        raise ModelError("state index out of range")
    if obs.actions.min() < 0 or obs.actions.max() >= sp.n_actions:
        raise ModelError("action index out of range")


def _factors(family, theta, obs):
    _check_obs(family, obs)
    return np.ascontiguousarray(step_factors(family, theta, obs.states, obs.actions))


def _forward_from_factors(h, mu) -> MessageTable:
    T, n_opt = h.shape[0], h.shape[1]
    alpha = np.empty((T, n_opt, 2))
    log_norm = np.empty(T)
    bad = _forward(h, np.ascontiguousarray(mu, dtype=float), alpha, log_norm)
    if bad >= 0:
        raise FloatingPointError(f"forward message vanished at t={bad + 1}")
    return MessageTable(alpha, log_norm)


def _backward_from_factors(h) -> MessageTable:
    T, n_opt = h.shape[0], h.shape[1]
    beta = np.empty((T, n_opt, 2))
    log_norm = np.empty(T)
    bad = _backward(h, beta, log_norm)
    if bad >= 0:
        raise FloatingPointError(f"backward message vanished at t={bad + 1}")
    return MessageTable(beta, log_norm)


def forward_messages(family: PolicyFamily, theta: Theta, obs: ObservationSequence, mu) -> MessageTable:
    mu = as_prior(mu, family.spaces.n_options)
    return _forward_from_factors(_factors(family, theta, obs), mu)


def backward_messages(family: PolicyFamily, theta: Theta, obs: ObservationSequence) -> MessageTable:
    return _backward_from_factors(_factors(family, theta, obs))


def smooth_factors(h: np.ndarray, mu: np.ndarray) -> SmoothingTable:
    """Smoothing from precomputed step factors ``h[t, o_prev, b, o]``."""
    fwd = _forward_from_factors(h, mu)
    bwd = _backward_from_factors(h)
    T, n_opt = h.shape[0], h.shape[1]
    gamma = np.empty((T, n_opt, 2))
    gamma2 = np.empty((T - 1, n_opt, 2))
    _combine(h, fwd.values, bwd.values, gamma, gamma2)
    return SmoothingTable(gamma, gamma2, float(fwd.log_norm.sum()), fwd, bwd)


def smooth(family: PolicyFamily, theta: Theta, obs: ObservationSequence, mu) -> SmoothingTable:
    mu = as_prior(mu, family.spaces.n_options)
    return smooth_factors(_factors(family, theta, obs), mu)


def marginal_log_likelihood(family: PolicyFamily, theta: Theta, obs: ObservationSequence, mu) -> float:
    """log of the latent-summed joint of actions and states given ``s_1``."""
    return forward_messages(family, theta, obs, mu).log_norm.sum().item()


def unscaled_log_mass(table: SmoothingTable) -> np.ndarray:
    """``log sum_{o,b}`` of unscaled forward times unscaled backward, per time step.

    Every entry equals the marginal log-likelihood.
    """
    fwd, bwd = table.forward, table.backward
    inner = np.log(np.einsum("tob,tob->t", fwd.values, bwd.values))
    head = np.cumsum(fwd.log_norm)
    tail = np.cumsum(bwd.log_norm[::-1])[::-1]
    return inner + head + tail


def smooth_direct(family: PolicyFamily, theta: Theta, obs: ObservationSequence, mu) -> SmoothingTable:
    """Unscaled recursions in plain probability space (short sequences only)."""
    mu = as_prior(mu, family.spaces.n_options)
    h = step_factors(family, theta, obs.states, obs.actions)
    T, n_opt = h.shape[0], h.shape[1]
    alpha = np.empty((T, n_opt, 2))
    alpha[0] = np.einsum("p,pbo->ob", mu, h[0])
    for t in range(1, T):
        alpha[t] = np.einsum("p,pbo->ob", alpha[t - 1].sum(axis=1), h[t])
    beta = np.ones((T, n_opt, 2))
    for t in range(T - 2, -1, -1):
        beta[t] = np.einsum("pbo,ob->p", h[t + 1], beta[t + 1])[:, None]
    lik = alpha[T - 1].sum()
    gamma = alpha * beta / lik
    gamma2 = np.einsum("tpbo,tob->tpb", h[1:], beta[1:]) * alpha[:-1].sum(axis=2)[:, :, None] / lik
    return SmoothingTable(gamma, gamma2, float(np.log(lik)))


def windowed_smooth(
    family: PolicyFamily,
    theta: Theta,
    long_obs: ObservationSequence,
    center_range: tuple[int, int],
    k: int,
    head_prior=None,
) -> SmoothingTable:
    """Smoothing on the core window ``[start, stop)`` (0-based) computed over
    the extended window ``[start - k, stop + k)``.

    The extended window starts from ``head_prior`` over the option preceding
    its first step (uniform by default). The returned table covers the core
    window only; ``gamma2`` covers core times after the first, so ``k = 0``
    matches :func:`smooth` on the core window. ``log_marginal`` refers to the
    extended window.
    """
    start, stop = center_range
    if k < 0 or stop - start < 2:
        raise ModelError("need k >= 0 and a core window of at least 2 steps")
    lo, hi = start - k, stop + k
    if lo < 0 or hi > len(long_obs):
        raise ModelError(f"extended window [{lo}, {hi}) exceeds observations of length {len(long_obs)}")
    n_opt = family.spaces.n_options
    mu = uniform_prior(n_opt) if head_prior is None else head_prior
    full = smooth(family, theta, long_obs.window(lo, hi), mu)
    n = stop - start
    return SmoothingTable(full.gamma[k : k + n], full.gamma2[k : k + n - 1], full.log_marginal)


def tv_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Total variation distance over the trailing ``(O, 2)`` axes."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=(-2, -1))
