"""Multi-path EM experiments on the four-state target-seeking example.

Every output is a pure function of the configuration: trajectories and random
initial points are drawn from per-path streams derived from ``master_seed``
and results are reduced in path order regardless of worker scheduling.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .em import EMConfig, em_run
from .families import THETA_INIT, THETA_STAR, TargetSeekingFamily
from .model import ModelError, Theta
from .simulator import (
    DEFAULT_BURN_IN,
    ObservationSequence,
    make_grid_env,
    make_rng,
    path_seed,
    sample_stationary,
)

log = logging.getLogger(__name__)

INIT_STREAM = 1


@dataclass(frozen=True)
class ExperimentConfig:
    theta_star: tuple = THETA_STAR
    zeta: float = 0.1
    T_list: tuple = (5000, 8000, 10000)
    n_paths: int = 50
    n_iters: int = 1000
    theta0: tuple = THETA_INIT
    init_scale: Optional[float] = None  # random init theta* - w * U[0,1]^3 when set
    mu_rightend: float = 1.0
    burn_in: int = DEFAULT_BURN_IN
    path_length: Optional[int] = None  # kept steps per path; defaults to max(T_list)
    master_seed: int = 0
    early_stop_tol: float = 0.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "T_list", tuple(int(t) for t in self.T_list))
        object.__setattr__(self, "theta_star", tuple(float(v) for v in self.theta_star))
        object.__setattr__(self, "theta0", tuple(float(v) for v in self.theta0))
        if not self.T_list or min(self.T_list) < 2:
            raise ModelError("every T must be >= 2")
        if self.n_paths < 1 or self.n_iters < 1:
            raise ModelError("n_paths and n_iters must be >= 1")
        if not 0.0 <= self.mu_rightend <= 1.0:
            raise ModelError("mu_rightend must lie in [0, 1]")
        if self.init_scale is not None and self.init_scale < 0:
            raise ModelError("init_scale must be >= 0")
        if self.kept_length < max(self.T_list):
            raise ModelError("path_length shorter than the largest T")
        fam = self.family()
        fam.check(Theta(*self.theta_star))
        fam.check(Theta(*self.theta0))

    @property
    def kept_length(self) -> int:
        return self.path_length if self.path_length is not None else max(self.T_list)

    def family(self) -> TargetSeekingFamily:
        return TargetSeekingFamily(zeta=self.zeta)

    def mu(self) -> np.ndarray:
        return np.array([1.0 - self.mu_rightend, self.mu_rightend])


DESK_PRESET = dict(n_paths=10, n_iters=300, T_list=(2000, 5000))


@dataclass
class ErrTable:
    """Per-path errors ``errors[T][path, n] = ||theta_n - theta*||_2``."""

    T_list: tuple
    errors: dict = field(default_factory=dict)

    @property
    def n_iters(self) -> int:
        return next(iter(self.errors.values())).shape[1] - 1

    def mean(self, T: int) -> np.ndarray:
        return self.errors[T].mean(axis=0)

    def err(self, n: int, T: int) -> float:
        return float(self.errors[T][:, n].mean())

    def rows(self):
        for T in self.T_list:
            for n, e in enumerate(self.mean(T)):
                yield n, T, float(e)

    def write(self, out_dir: Path, prefix: str = "") -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / f"{prefix}err.csv"]
        write_columns(paths[0], {f"err_T{T}": self.mean(T) for T in self.T_list})
        for T in self.T_list:
            p = out_dir / f"{prefix}per_path_T{T}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["path_id", "n", "err"])
                for i, row in enumerate(self.errors[T]):
                    for n, e in enumerate(row):
                        w.writerow([i, n, f"{e:.12g}"])
            paths.append(p)
        return paths


def write_columns(path: Path, columns: dict) -> None:
    """CSV with an ``n`` column followed by the given equal-length series."""
    names = list(columns)
    length = len(next(iter(columns.values())))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", *names])
        for n in range(length):
            w.writerow([n, *(f"{columns[k][n]:.12g}" for k in names)])


def sample_paths(config: ExperimentConfig) -> list[ObservationSequence]:
    fam = config.family()
    env = make_grid_env()
    theta_star = Theta(*config.theta_star)
    out = []
    for i in range(config.n_paths):
        traj = sample_stationary(
            fam, theta_star, env, config.kept_length, config.burn_in, seed=path_seed(config.master_seed, i)
        )
        out.append(traj.observations())
    return out


def initial_theta(config: ExperimentConfig, path_index: int) -> Theta:
    if config.init_scale is None:
        return Theta(*config.theta0)
    fam = config.family()
    x = make_rng(path_seed(config.master_seed, path_index, INIT_STREAM)).random(3)
    return Theta(*(fam.clamp(t - config.init_scale * xi) for t, xi in zip(config.theta_star, x)))


def _path_job(args) -> np.ndarray:
    config, index, obs, T = args
    fam = config.family()
    em_cfg = EMConfig(config.n_iters, config.mu(), initial_theta(config, index), config.early_stop_tol)
    trace = em_run(fam, obs.window(0, T), em_cfg)
    theta_star = Theta(*config.theta_star)
    return np.array([th.distance(theta_star) for th in trace.padded_thetas(config.n_iters)])


def _map(jobs, workers: int):
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_path_job, jobs))
    return [_path_job(j) for j in jobs]


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    trajectories: Optional[list] = None,
    prefix: str = "",
) -> ErrTable:
    """EM on every (path, T) pair; ``err(n, T)`` is the mean over paths."""
    if trajectories is None:
        trajectories = sample_paths(config)
    if len(trajectories) != config.n_paths:
        raise ModelError("number of trajectories does not match n_paths")
    jobs = [(config, i, obs, T) for T in config.T_list for i, obs in enumerate(trajectories)]
    log.info("running %d EM jobs (N=%d)", len(jobs), config.n_iters)
    results = _map(jobs, config.workers)
    table = ErrTable(config.T_list)
    for j, T in enumerate(config.T_list):
        table.errors[T] = np.vstack(results[j * config.n_paths : (j + 1) * config.n_paths])
    if out_dir is not None:
        files = table.write(out_dir, prefix)
        write_manifest(out_dir, f"{prefix}manifest.json", {"experiment": config_dict(config)}, files)
    return table


@dataclass
class Bucket:
    interval: tuple
    members: np.ndarray  # path indices
    curve: np.ndarray  # mean error per n over members


def percentile_buckets(per_path: np.ndarray, n_final: int, intervals) -> list[Bucket]:
    """Group paths by the percentile of their error at iteration ``n_final``.

    A path belongs to ``[I1, I2]`` when its final error exceeds the ``I1``-th
    percentile (or ``I1 == 0``) and does not exceed the ``I2``-th percentile,
    so a tie on a shared boundary falls in the lower bucket.
    """
    final = per_path[:, n_final]
    out = []
    for i1, i2 in intervals:
        if not 0 <= i1 < i2 <= 100:
            raise ModelError(f"bad percentile interval [{i1}, {i2}]")
        q1, q2 = np.percentile(final, [i1, i2])
        lower_ok = final > q1 if i1 > 0 else final >= q1
        members = np.flatnonzero(lower_ok & (final <= q2))
        if members.size == 0:
            raise ModelError(f"empty percentile bucket [{i1}, {i2}]")
        out.append(Bucket((i1, i2), members, per_path[members].mean(axis=0)))
    return out


def write_buckets(path: Path, buckets: list[Bucket]) -> None:
    write_columns(path, {f"err_I{b.interval[0]:g}_{b.interval[1]:g}": b.curve for b in buckets})


@dataclass
class SweepResult:
    values: tuple
    tables: list  # one ErrTable per swept value

    def final_errors(self, T: int) -> np.ndarray:
        return np.array([t.err(t.n_iters, T) for t in self.tables])

    def spread(self, T: int) -> float:
        """max over the sweep of the final err divided by the min."""
        f = self.final_errors(T)
        return float(f.max() / f.min())


def mu_sweep(config: ExperimentConfig, mu_values, out_dir=None, trajectories=None) -> SweepResult:
    """Rerun the experiment for each ``mu(RIGHTEND)`` on shared trajectories."""
    if trajectories is None:
        trajectories = sample_paths(config)
    tables = [run_experiment(replace(config, mu_rightend=float(m)), None, trajectories) for m in mu_values]
    result = SweepResult(tuple(mu_values), tables)
    if out_dir is not None:
        _write_sweep(out_dir, "mu_sweep", "mu", config, result)
    return result


def random_init_sweep(config: ExperimentConfig, w_list, out_dir=None, trajectories=None) -> SweepResult:
    """Per-path random initial points ``theta* - w * x`` with ``x ~ U[0,1]^3``
    shared across ``w``, clamped to the parameter box."""
    if trajectories is None:
        trajectories = sample_paths(config)
    tables = [run_experiment(replace(config, init_scale=float(w)), None, trajectories) for w in w_list]
    result = SweepResult(tuple(w_list), tables)
    if out_dir is not None:
        _write_sweep(out_dir, "random_init", "w", config, result)
    return result


def _write_sweep(out_dir, name, label, config, result: SweepResult):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = []
    for T in config.T_list:
        p = out_dir / f"{name}_T{T}.csv"
        write_columns(p, {f"err_{label}{v:g}": t.mean(T) for v, t in zip(result.values, result.tables)})
        files.append(p)
    write_manifest(
        out_dir, f"{name}_manifest.json", {name: {**config_dict(config), label: list(result.values)}}, files
    )


def config_dict(config: ExperimentConfig) -> dict:
    d = asdict(config)
    for k, v in d.items():
        if isinstance(v, tuple):
            d[k] = list(v)
    return d


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, name: str, config: dict, files) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "config": config,
        "files": {Path(f).name: file_sha256(f) for f in files},
    }
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
