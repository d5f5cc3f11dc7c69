"""Command-line entry point.

Every subcommand reads an optional INI file (``--config``) and writes CSVs
plus a JSON manifest into ``--out``. Missing sections and keys fall back to
the defaults of the target-seeking study. Recognized sections:

``[model]``
    ``zeta``, ``theta_star`` (three comma-separated values)
``[simulate]``
    ``T``, ``burn_in``, ``n_paths``, ``master_seed``
``[em]``
    ``observations`` (CSV with ``s`` and ``a`` columns, relative to the config
    file), ``T`` (optional prefix length), ``n_iters``, ``theta0``,
    ``mu_rightend``, ``early_stop_tol``
``[experiment]``
    ``preset`` (``desk`` or ``full``) and any ``ExperimentConfig`` field as an
    override: ``T_list``, ``n_paths``, ``n_iters``, ``theta0``, ``init_scale``,
    ``mu_rightend``, ``burn_in``, ``path_length``, ``master_seed``,
    ``early_stop_tol``, ``workers``
``[percentiles]``
    ``intervals`` such as ``0-50, 50-90, 90-100``
``[mu_sweep]``
    ``values``
``[random_init]``
    ``w``
``[oracle]``
    ``n_instances``, ``seed``, ``tolerance``
``[stability]``
    ``n_sequences``, ``core_length``, ``k_list``, ``seed``, ``burn_in``,
    ``perturb_scales``

Exit status is 0 on success, 1 when a check fails and 2 on bad input.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .em import EMConfig, em_run, q_value
from .experiment import (
    DESK_PRESET,
    ExperimentConfig,
    mu_sweep,
    percentile_buckets,
    random_init_sweep,
    run_experiment,
    sample_paths,
    write_buckets,
    write_manifest,
)
from .families import TargetSeekingFamily
from .model import ModelError, Theta, point_prior
from .oracle import oracle_backward, oracle_forward, oracle_q_value, oracle_smoothing, random_instance
from .simulator import (
    DEFAULT_BURN_IN,
    make_grid_env,
    make_rng,
    path_seed,
    read_observations_csv,
    sample_stationary,
)
from .smoothing import backward_messages, forward_messages, smooth
from .stability import perturbation_sweep, tv_forgetting_experiment

log = logging.getLogger("optionem")


class CheckFailed(Exception):
    """A numerical check ran to completion and did not pass."""


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple:
    return tuple(int(v) for v in text.replace(",", " ").split())


def _intervals(text: str) -> list:
    out = []
    for part in text.split(","):
        lo, hi = part.strip().split("-")
        out.append((float(lo), float(hi)))
    return out


def load_config(path) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    return cp


def _section(cp, name):
    return cp[name] if cp.has_section(name) else {}


def _model(cp):
    sec = _section(cp, "model")
    fam = TargetSeekingFamily(zeta=float(sec.get("zeta", 0.1)))
    theta_star = fam.theta(*_floats(sec.get("theta_star", "0.6, 0.7, 0.8")))
    return fam, theta_star


def _write_rows(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def cmd_simulate(cp, out: Path, config_path) -> None:
    fam, theta_star = _model(cp)
    sec = _section(cp, "simulate")
    T = int(sec.get("T", 5000))
    burn_in = int(sec.get("burn_in", DEFAULT_BURN_IN))
    n_paths = int(sec.get("n_paths", 1))
    master = int(sec.get("master_seed", 0))
    env = make_grid_env()
    files = []
    for i in range(n_paths):
        traj = sample_stationary(fam, theta_star, env, T, burn_in, seed=path_seed(master, i))
        p = out / f"path_{i}.csv"
        traj.to_csv(p)
        files.append(p)
    cfg = {"zeta": fam.zeta, "theta_star": list(theta_star.vector()), "T": T,
           "burn_in": burn_in, "n_paths": n_paths, "master_seed": master}
    write_manifest(out, "manifest.json", {"simulate": cfg}, files)


def cmd_em(cp, out: Path, config_path) -> None:
    fam, theta_star = _model(cp)
    sec = _section(cp, "em")
    if "observations" not in sec:
        raise ModelError("[em] needs an 'observations' CSV path")
    obs_path = Path(sec["observations"])
    if config_path is not None and not obs_path.is_absolute():
        obs_path = Path(config_path).parent / obs_path
    obs = read_observations_csv(obs_path)
    if "T" in sec:
        obs = obs.window(0, int(sec["T"]))
    mu_right = float(sec.get("mu_rightend", 1.0))
    em_cfg = EMConfig(
        int(sec.get("n_iters", 300)),
        np.array([1.0 - mu_right, mu_right]),
        fam.theta(*_floats(sec.get("theta0", "0.5, 0.6, 0.7"))),
        float(sec.get("early_stop_tol", 0.0)),
    )
    trace = em_run(fam, obs, em_cfg)
    p = out / "em_trace.csv"
    trace.to_csv(p)
    err = out / "em_err.csv"
    _write_rows(err, ["n", "err"], [[n, f"{e:.12g}"] for n, e in enumerate(trace.errors(theta_star))])
    cfg = {"observations": str(sec["observations"]), "T": len(obs), "n_iters": em_cfg.n_iters,
           "theta0": list(em_cfg.theta0.vector()), "mu_rightend": mu_right,
           "early_stop_tol": em_cfg.early_stop_tol, "zeta": fam.zeta,
           "theta_star": list(theta_star.vector())}
    write_manifest(out, "manifest.json", {"em": cfg}, [p, err])


_EXPERIMENT_PARSERS = {
    "theta_star": _floats,
    "theta0": _floats,
    "T_list": _ints,
    "init_scale": float,
    "mu_rightend": float,
    "zeta": float,
    "early_stop_tol": float,
}


def experiment_config(cp) -> ExperimentConfig:
    sec = _section(cp, "experiment")
    preset = sec.get("preset", "desk")
    if preset == "desk":
        kwargs = dict(DESK_PRESET)
    elif preset == "full":
        kwargs = {}
    else:
        raise ModelError(f"unknown preset {preset!r}")
    model = _section(cp, "model")
    if "zeta" in model:
        kwargs["zeta"] = float(model["zeta"])
    if "theta_star" in model:
        kwargs["theta_star"] = _floats(model["theta_star"])
    names = {f.name for f in fields(ExperimentConfig)}
    for key, value in sec.items():
        if key == "preset":
            continue
        # configparser lowercases keys
        name = "T_list" if key == "t_list" else key
        if name not in names:
            raise ModelError(f"unknown [experiment] key {key!r}")
        kwargs[name] = _EXPERIMENT_PARSERS.get(name, int)(value)
    return ExperimentConfig(**kwargs)


def cmd_experiment(cp, out: Path, config_path) -> None:
    config = experiment_config(cp)
    trajectories = sample_paths(config)
    table = run_experiment(config, out, trajectories)
    if cp.has_section("percentiles"):
        sec = cp["percentiles"]
        intervals = _intervals(sec.get("intervals", "0-50, 50-90, 90-100"))
        files = []
        for T in config.T_list:
            buckets = percentile_buckets(table.errors[T], config.n_iters, intervals)
            p = out / f"percentiles_T{T}.csv"
            write_buckets(p, buckets)
            files.append(p)
        write_manifest(out, "percentiles_manifest.json",
                       {"percentiles": {"intervals": [list(i) for i in intervals]}}, files)
    if cp.has_section("mu_sweep"):
        values = _floats(cp["mu_sweep"].get("values", "0.2, 0.5, 0.8"))
        res = mu_sweep(config, values, out, trajectories)
        for T in config.T_list:
            log.info("mu sweep T=%d spread %.4f", T, res.spread(T))
    if cp.has_section("random_init"):
        w_list = _floats(cp["random_init"].get("w", "0.1, 0.2, 0.3"))
        random_init_sweep(config, w_list, out, trajectories)
    for T in config.T_list:
        log.info("T=%d err(0)=%.4f err(N)=%.4f", T, table.err(0, T), table.err(config.n_iters, T))


def cmd_oracle_check(cp, out: Path, config_path) -> None:
    sec = _section(cp, "oracle")
    n = int(sec.get("n_instances", 100))
    seed = int(sec.get("seed", 0))
    tol = float(sec.get("tolerance", 1e-9))
    rng = make_rng(seed)
    rows = []
    worst = 0.0
    for i in range(n):
        fam, theta, obs, mu, env = random_instance(rng)
        theta_q = fam.random_theta(rng)
        ref = oracle_smoothing(fam, theta, obs, mu, env)
        got = smooth(fam, theta, obs, mu)
        errs = [
            np.abs(ref.gamma - got.gamma).max(),
            np.abs(ref.gamma2 - got.gamma2).max(),
            np.abs(oracle_forward(fam, theta, obs, mu) - forward_messages(fam, theta, obs, mu).values).max(),
            np.abs(oracle_backward(fam, theta, obs) - backward_messages(fam, theta, obs).values).max(),
            abs(ref.log_marginal - got.log_marginal),
            abs(oracle_q_value(fam, theta_q, theta, obs, mu) - q_value(fam, theta_q, got, obs)),
        ]
        worst = max(worst, max(errs))
        rows.append([i, fam.spaces.n_states, fam.spaces.n_actions, fam.spaces.n_options, len(obs),
                     *(f"{e:.6g}" for e in errs)])
    p = _write_rows(out / "oracle_check.csv",
                    ["instance", "n_states", "n_actions", "n_options", "T",
                     "err_gamma", "err_gamma2", "err_alpha", "err_beta", "err_log_marginal", "err_q"],
                    rows)
    write_manifest(out, "manifest.json", {"oracle": {"n_instances": n, "seed": seed, "tolerance": tol}}, [p])
    log.info("oracle check: worst absolute error %.3g over %d instances", worst, n)
    if not worst <= tol:
        raise CheckFailed(f"oracle mismatch {worst:.3g} exceeds tolerance {tol:g}")


def cmd_stability(cp, out: Path, config_path) -> None:
    fam, theta_star = _model(cp)
    sec = _section(cp, "stability")
    n_seq = int(sec.get("n_sequences", 20))
    core = int(sec.get("core_length", 200))
    k_list = _ints(sec.get("k_list", "1, 10, 100, 1000"))
    seed = int(sec.get("seed", 0))
    burn_in = int(sec.get("burn_in", DEFAULT_BURN_IN))
    scales = _floats(sec.get("perturb_scales", "0.08, 0.04, 0.02, 0.01, 0.005"))
    env = make_grid_env()
    kmax = max(k_list)
    rows = []
    violations = 0
    pert_rows = []
    direction = Theta(1.0, -1.0, 1.0)
    for i in range(n_seq):
        traj = sample_stationary(fam, theta_star, env, core + 2 * kmax, burn_in, seed=path_seed(seed, i))
        obs = traj.observations()
        rep = tv_forgetting_experiment(
            fam, theta_star, obs, (kmax, kmax + core), k_list, (point_prior(0, 2), point_prior(1, 2))
        )
        violations += len(rep.violations)
        rows.extend([i, k, t, f"{m:.12g}", f"{b:.12g}"] for k, t, m, b in rep.rows)
        for scale, (dn, tv, ratio) in zip(scales, perturbation_sweep(fam, theta_star, direction, scales, obs)):
            pert_rows.append([i, f"{scale:.12g}", f"{dn:.12g}", f"{tv:.12g}", f"{ratio:.12g}"])
    f1 = _write_rows(out / "forgetting.csv", ["sequence", "k", "t", "measured", "bound"], rows)
    f2 = _write_rows(out / "perturbation.csv", ["sequence", "scale", "delta_norm", "max_tv", "ratio"], pert_rows)
    cfg = {"n_sequences": n_seq, "core_length": core, "k_list": list(k_list), "seed": seed,
           "burn_in": burn_in, "perturb_scales": list(scales), "zeta": fam.zeta,
           "theta_star": list(theta_star.vector())}
    write_manifest(out, "manifest.json", {"stability": cfg}, [f1, f2])
    if violations:
        raise CheckFailed(f"forgetting bound exceeded at {violations} (k, t) points")


COMMANDS = {
    "simulate": (cmd_simulate, "sample stationary trajectories"),
    "em": (cmd_em, "run EM on an observation CSV"),
    "experiment": (cmd_experiment, "multi-path EM study with optional sweeps"),
    "oracle-check": (cmd_oracle_check, "compare recursions against brute-force enumeration"),
    "stability": (cmd_stability, "forgetting and parameter-perturbation diagnostics"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="optionem", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="INI configuration file")
        p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    func = COMMANDS[args.command][0]
    try:
        cp = load_config(args.config)
        args.out.mkdir(parents=True, exist_ok=True)
        func(cp, args.out, args.config)
    except CheckFailed as exc:
        print(f"optionem {args.command}: check failed: {exc}", file=sys.stderr)
        return 1
    except (ModelError, ValueError, KeyError, OSError, configparser.Error, ZeroDivisionError) as exc:
        print(f"optionem {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
