"""Exhaustive enumeration of latent paths for small instances.

A latent path is ``(o_0, ..., o_T, b_1, ..., b_T)``. The weight of every
path is materialized in a dense tensor with one axis per latent variable,
built from scalar ``eval_*`` calls, so nothing here shares code with the
recursive smoother; marginals are plain sums over axes.
"""
from __future__ import annotations

import itertools
from typing import Optional

import numpy as np

from .model import (
    Environment,
    ModelError,
    PolicyFamily,
    Theta,
    as_prior,
    eval_bar_pi_hi,
    eval_pi_b,
    eval_pi_hi,
    eval_pi_lo,
)
from .simulator import ObservationSequence
from .smoothing import SmoothingTable

MAX_PATHS = 10**7


def n_latent_paths(n_options: int, T: int) -> int:
    return n_options ** (T + 1) * 2**T


def _factor_tables(family, theta, obs):
    """``f[t][o_prev, b, o]`` from scalar evaluations (t is 0-based)."""
    n_opt = family.spaces.n_options
    out = []
    for s, a in zip(obs.states.tolist(), obs.actions.tolist()):
        f = np.empty((n_opt, 2, n_opt))
        for op, b, o in itertools.product(range(n_opt), range(2), range(n_opt)):
            f[op, b, o] = (
                eval_pi_b(family, theta, b, s, op)
                * eval_bar_pi_hi(family, theta, o, s, op, b)
                * eval_pi_lo(family, theta, a, s, o)
            )
        out.append(f)
    return out


def _axis_view(arr, axes, ndim):
    """Broadcast ``arr`` (whose dims correspond to ``axes``, ascending) into ``ndim`` dims."""
    shape = [1] * ndim
    for ax, n in zip(axes, arr.shape):
        shape[ax] = n
    return arr.reshape(shape)


def _joint_tensor(factors, mu):
    """Weight of every latent path as a dense tensor.

    Axes are ``o_0..o_T`` followed by ``b_1..b_T``; entry ``[o_0, .., b_T]`` is
    ``mu(o_0) * prod_t f_t[o_{t-1}, b_t, o_t]``.
    """
    T = len(factors)
    ndim = 2 * T + 1
    w = _axis_view(np.asarray(mu, dtype=float), (0,), ndim)
    for t, f in enumerate(factors):
        # f is indexed (o_prev, b, o); tensor axes run o_prev < o < b
        w = w * _axis_view(f.transpose(0, 2, 1), (t, t + 1, T + 1 + t), ndim)
    return w


def _guard(n_opt, T):
    if n_latent_paths(n_opt, T) > MAX_PATHS:
        raise ModelError(f"instance too large for enumeration: {n_latent_paths(n_opt, T)} latent paths")


def _env_log_factor(env: Optional[Environment], obs) -> float:
    if env is None:
        return 0.0
    s, a = obs.states, obs.actions
    return float(np.log(env.transition[s[:-1], a[:-1], s[1:]]).sum())


def _posterior_sums(factors, mu, n_opt, T, env_scale=1.0):
    """Path mass by ``(t, o_t, b_t)`` and ``(t, o_{t-1}, b_t)``."""
    w = _joint_tensor(factors, mu) * env_scale
    axes = set(range(2 * T + 1))
    one = np.empty((T, n_opt, 2))
    two = np.empty((T, n_opt, 2))
    for t in range(T):
        one[t] = w.sum(axis=tuple(sorted(axes - {t + 1, T + 1 + t})))
        two[t] = w.sum(axis=tuple(sorted(axes - {t, T + 1 + t})))
    return one, two, float(w.sum())


def oracle_smoothing(
    family: PolicyFamily, theta: Theta, obs: ObservationSequence, mu, env: Optional[Environment] = None
) -> SmoothingTable:
    """Exact posterior marginals. Environment factors, when given, are
    multiplied into every path weight; they cancel in the posteriors."""
    n_opt, T = family.spaces.n_options, len(obs)
    _guard(n_opt, T)
    mu = as_prior(mu, n_opt)
    factors = _factor_tables(family, theta, obs)
    env_scale = float(np.exp(_env_log_factor(env, obs)))
    one, two, total = _posterior_sums(factors, mu, n_opt, T, env_scale)
    log_marginal = float(np.log(total) - np.log(env_scale))
    return SmoothingTable(one / total, two[1:] / total, log_marginal)


def oracle_marginal(
    family: PolicyFamily, theta: Theta, obs: ObservationSequence, mu, env: Optional[Environment] = None
) -> float:
    """log of the latent-summed joint, environment factors excluded.

    ``env`` is accepted for symmetry with :func:`oracle_smoothing`; its
    factors are divided back out.
    """
    return oracle_smoothing(family, theta, obs, mu, env).log_marginal


def oracle_forward(family, theta, obs, mu) -> np.ndarray:
    """Normalized ``P(s_{2:t}, a_{1:t}, O_t, B_t)`` for each ``t`` by enumerating prefixes."""
    n_opt, T = family.spaces.n_options, len(obs)
    _guard(n_opt, T)
    mu = as_prior(mu, n_opt)
    factors = _factor_tables(family, theta, obs)
    out = np.empty((T, n_opt, 2))
    for t in range(1, T + 1):
        w = _joint_tensor(factors[:t], mu)
        keep = {t, 2 * t}
        acc = w.sum(axis=tuple(i for i in range(2 * t + 1) if i not in keep))
        out[t - 1] = acc / acc.sum()
    return out


def oracle_backward(family, theta, obs) -> np.ndarray:
    """Normalized ``P(s_{t+1:T}, a_{t+1:T} | s_t, a_t, O_t, B_t)`` by enumerating suffixes."""
    n_opt, T = family.spaces.n_options, len(obs)
    _guard(n_opt, T)
    factors = _factor_tables(family, theta, obs)
    out = np.full((T, n_opt, 2), 1.0 / (2 * n_opt))
    for t in range(T - 1):
        tail = factors[t + 1 :]
        # the first option axis plays o_t; each start gets unit weight
        w = _joint_tensor(tail, np.ones(n_opt))
        acc = w.sum(axis=tuple(range(1, w.ndim)))
        # suffix likelihood does not depend on b_t
        out[t] = np.repeat(acc[:, None], 2, axis=1) / (2 * acc.sum())
    return out


def oracle_q_value(
    family: PolicyFamily, theta_prime: Theta, theta: Theta, obs: ObservationSequence, mu
) -> float:
    """Posterior (under ``theta``) expectation of the complete log-likelihood
    under ``theta_prime``, keeping only ``theta_prime``-dependent terms and
    dropping the t = 1 termination term, divided by ``T``."""
    n_opt, T = family.spaces.n_options, len(obs)
    _guard(n_opt, T)
    mu = as_prior(mu, n_opt)
    factors = _factor_tables(family, theta, obs)
    s, a = obs.states.tolist(), obs.actions.tolist()
    log_b = np.array([[[np.log(eval_pi_b(family, theta_prime, b, s[t], op)) for b in range(2)]
                       for op in range(n_opt)] for t in range(T)])
    log_lo = np.array([[np.log(eval_pi_lo(family, theta_prime, a[t], s[t], o)) for o in range(n_opt)]
                       for t in range(T)])
    log_hi = np.array([[np.log(eval_pi_hi(family, theta_prime, o, s[t])) for o in range(n_opt)]
                       for t in range(T)])
    w = _joint_tensor(factors, mu)
    ndim = w.ndim
    # complete log-likelihood of every latent path, built term by term
    ll = np.zeros(w.shape)
    for t in range(T):
        ll += _axis_view(log_lo[t], (t + 1,), ndim)
        hi_term = np.stack([np.zeros(n_opt), log_hi[t]], axis=1)  # [o_t, b_t]
        ll += _axis_view(hi_term, (t + 1, T + 1 + t), ndim)
        if t >= 1:
            ll += _axis_view(log_b[t], (t, T + 1 + t), ndim)
    return float((w * ll).sum() / w.sum() / T)


def random_instance(
    rng: np.random.Generator, max_states: int = 4, max_actions: int = 2, max_options: int = 3, max_T: int = 8
):
    """Random tabular instance ``(family, theta, obs, mu, env)`` small enough to enumerate.

    Observations are sampled from the model itself.
    """
    from .families import TabularFamily
    from .model import Spaces
    from .simulator import sample_trajectory

    spaces = Spaces(
        int(rng.integers(1, max_states + 1)),
        int(rng.integers(1, max_actions + 1)),
        int(rng.integers(2, max_options + 1)),
    )
    family = TabularFamily(spaces, zeta=float(rng.uniform(0.05, 0.95)))
    theta = family.random_theta(rng)
    env = Environment(rng.dirichlet(np.ones(spaces.n_states), size=(spaces.n_states, spaces.n_actions)))
    mu = rng.dirichlet(np.ones(spaces.n_options))
    T = int(rng.integers(2, max_T + 1))
    traj = sample_trajectory(
        family, theta, env,
        int(rng.integers(spaces.n_options)), int(rng.integers(spaces.n_states)), T,
        seed=int(rng.integers(2**63)),
    )
    return family, theta, traj.observations(), mu, env
