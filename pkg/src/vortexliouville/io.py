"""Run configuration, JSON manifests and CSV exports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .dynamics import Trajectory, hamiltonian_batch
from .geometry import KINDS

SUBCOMMANDS = ("kernels-selftest", "simulate", "collision-tail", "measure-preservation",
               "koopman-check", "variance-identity", "vepsilon-convergence", "gibbs-sample")
RANDOMIZED = frozenset(SUBCOMMANDS) - {"kernels-selftest", "simulate"}


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class RunConfig:
    """Everything one CLI run needs; JSON round-trips exactly."""

    subcommand: str
    geometry: str = "torus"
    disk_self_term: str = "image"
    torus_table_resolution: int = 256
    intensities: list = field(default_factory=list)
    positions: list = field(default_factory=list)
    measure: str = "uniform"
    beta: float = 0.0
    t: float = 1.0
    epsilon: float = 0.0
    delta: float = 0.0
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    c_grid: list = field(default_factory=lambda: [1e-1, 3e-2, 1e-2, 3e-3, 1e-3])
    epsilon_grid: list = field(default_factory=lambda: [0.1, 0.05, 0.02, 0.01])
    n_samples: int = 1000
    n_observables: int = 1
    arrested: bool = False
    n_vortices: int = 0
    nu: dict = field(default_factory=lambda: {"family": "two_point", "a": 1.0, "b": -1.0, "p": 0.5})
    phi: dict = field(default_factory=lambda: {"kind": "fourier", "powers": [[1, 1], [-1, -1]],
                                               "re": [0.5, 0.5], "im": [0.0, 0.0]})
    burn_in_sweeps: int = 10_000
    thin_sweeps: int = 10
    seed: int | None = None
    threads: int | None = None
    out: str = "vl_out"

    def __post_init__(self):
        if self.subcommand not in SUBCOMMANDS:
            raise ConfigError("subcommand", f"unknown subcommand {self.subcommand!r}")
        if self.geometry not in KINDS:
            raise ConfigError("geometry", f"unknown geometry {self.geometry!r}")
        if self.n_vortices == 0:
            self.n_vortices = len(self.intensities)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown configuration field")
        if "subcommand" not in d:
            raise ConfigError("subcommand", "missing")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        """Field-level checks shared by every subcommand."""
        if self.subcommand in RANDOMIZED and self.seed is None:
            raise ConfigError("seed", "randomized subcommands require an explicit --seed")
        if self.seed is not None and not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed", "must be an unsigned 64-bit integer")
        if self.intensities and len(self.intensities) != self.n_vortices:
            raise ConfigError("intensities", f"expected {self.n_vortices} values, "
                                             f"got {len(self.intensities)}")
        if self.positions and len(self.positions) != self.n_vortices:
            raise ConfigError("positions", f"expected {self.n_vortices} points, "
                                           f"got {len(self.positions)}")
        if self.t < 0:
            raise ConfigError("t", "must be nonnegative")
        if self.epsilon < 0:
            raise ConfigError("epsilon", "must be nonnegative")
        if not 1e-14 <= self.rel_tol <= 1e-2:
            raise ConfigError("rel_tol", "must lie in [1e-14, 1e-2]")
        if not 1e-14 <= self.abs_tol <= 1e-2:
            raise ConfigError("abs_tol", "must lie in [1e-14, 1e-2]")
        if self.n_samples < 1:
            raise ConfigError("n_samples", "must be positive")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads", "must be positive")


def load_config(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("config", str(exc)) from exc


def to_jsonable(obj):
    """Recursively convert numpy scalars/arrays and complex numbers for JSON."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def manifest(config: RunConfig, results: dict, files: list[str]) -> dict:
    return {"config": config.to_dict(), "results": results, "files": sorted(files),
            "version": __version__, "backend": BACKEND}


def config_from_manifest(m: dict) -> RunConfig:
    return RunConfig.from_dict(m["config"])


def trajectory_rows(traj: Trajectory) -> tuple[list[str], np.ndarray]:
    """Header and rows ``t, x_i_d..., min_dist, H, jac_det`` at accepted steps."""
    P = traj.positions
    S, n, d = P.shape
    header = ["t"] + [f"x_{i + 1}_{k + 1}" for i in range(n) for k in range(d)]
    header += ["min_dist", "H", "jac_det"]
    H = hamiltonian_batch(traj.geometry, traj.geometry.canonical(P), traj.intensities)
    det = traj.jacobian_det if traj.jacobian_det is not None else np.full(S, np.nan)
    rows = np.column_stack([traj.time_grid, P.reshape(S, n * d), traj.min_distance_history, H, det])
    return header, rows


def write_trajectory_csv(path, traj: Trajectory) -> None:
    header, rows = trajectory_rows(traj)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def write_table_csv(path, header: list[str], columns: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
