"""Command-line entry point: ``vortexliouville <subcommand> [--config PATH] [overrides]``.

Exit codes: 0 success, 1 configuration error, 2 statistical check failed.
"""

from __future__ import annotations

import argparse
import json
import sys
import typing
from dataclasses import fields
from pathlib import Path

import numpy as np

from ._backend import set_threads
from .dynamics import FlowOptions, VortexState, hamiltonian_batch, integrate
from .ensemble import (IntensityLaw, MeasureSpec, collision_tail_experiment, gibbs_invariance_test,
                       measure_preservation_test, sample_batch, symmetry_check, unitarity_check,
                       variance_identity_check, vepsilon_convergence_experiment)
from .geometry import Geometry, RegularizationSpec, tangent_pair
from .io import (SUBCOMMANDS, ConfigError, RunConfig, load_config, manifest, write_json,
                 write_table_csv, write_trajectory_csv)
from .observables import TestFunction, random_observable
from .rng import derive, stream

OK, CONFIG_ERROR, STAT_FAILURE = 0, 1, 2


def _parse_bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes"):
        return True
    if text.lower() in ("0", "false", "no"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _parse_json(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _override_type(f):
    hints = typing.get_type_hints(RunConfig)
    t = hints[f.name]
    if t is bool:
        return _parse_bool
    if t is int:
        return int
    if t is float:
        return float
    if t is str:
        return str
    if f.name in ("seed", "threads"):
        return int
    return _parse_json


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vortexliouville", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="JSON run configuration; flags override its entries")
    for f in fields(RunConfig):
        if f.name == "subcommand":
            continue
        kind = _override_type(f)
        note = " (JSON)" if kind is _parse_json else ""
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None,
                       help=f"override {f.name}{note}")
    return p


def resolve_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    base = load_config(args.config) if args.config else {}
    base = dict(base)
    base["subcommand"] = args.subcommand
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if f.name != "subcommand" and v is not None:
            base[f.name] = v
    try:
        cfg = RunConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from exc
    cfg.validate()
    return cfg


# ---------------------------------------------------------------- subcommands

def _geometry(cfg: RunConfig) -> Geometry:
    return Geometry(cfg.geometry, cfg.torus_table_resolution, disk_self_term=cfg.disk_self_term)


def _need(cfg: RunConfig, name: str):
    value = getattr(cfg, name)
    if value in (None, [], 0):
        raise ConfigError(name, "required for this subcommand")
    return value


def _spec(cfg: RunConfig, geom: Geometry) -> MeasureSpec:
    _need(cfg, "intensities")
    return MeasureSpec(cfg.measure, geom, cfg.n_vortices, tuple(cfg.intensities), beta=cfg.beta,
                       burn_in_sweeps=cfg.burn_in_sweeps, thin_sweeps=cfg.thin_sweeps)


def _opts(cfg: RunConfig, **kw) -> FlowOptions:
    return FlowOptions(epsilon=cfg.epsilon, rel_tol=cfg.rel_tol, abs_tol=cfg.abs_tol, **kw)


def run_selftest(cfg, out):
    rng = stream(0, 0)
    checks = {}
    for kind in ("torus", "sphere", "disk", "plane"):
        g = Geometry(kind)
        if kind == "plane":
            X, Y = rng.normal(size=(1000, 2)), rng.normal(size=(1000, 2))
        else:
            X, Y = g.uniform(rng, 1000), g.uniform(rng, 1000)
        for eps in (0.1, 0.01):
            G, K = tangent_pair(g, RegularizationSpec(eps), X, Y)
            checks[f"cancellation_{kind}_{eps}"] = bool(np.all(np.sum(G * K, axis=1) == 0.0))
    plane = Geometry("plane")
    traj = integrate(VortexState(np.array([[0.0, 0.0], [1.0, 0.0]]), np.array([1.0, -1.0]), plane),
                     1.0)
    shift = traj.final_state.positions - traj.positions[0]
    checks["dipole_translation"] = bool(abs(np.hypot(*shift[0]) - 1 / (2 * np.pi)) < 1e-8)
    passed = all(checks.values())
    return passed, {"checks": checks}, [], f"kernels-selftest: {sum(checks.values())}/{len(checks)} passed"


def run_simulate(cfg, out):
    geom = _geometry(cfg)
    _need(cfg, "positions")
    _need(cfg, "intensities")
    try:
        P = np.asarray(cfg.positions, dtype=np.float64)
    except ValueError as exc:
        raise ConfigError("positions", str(exc)) from exc
    if P.ndim != 2 or P.shape[1] != geom.dim:
        raise ConfigError("positions", f"expected {cfg.n_vortices} points of dimension {geom.dim}")
    state = VortexState(P, np.asarray(cfg.intensities, dtype=np.float64), geom)
    traj = integrate(state, cfg.t, _opts(cfg, track_variational=True))
    write_trajectory_csv(out / "trajectory.csv", traj)
    res = {"outcome": traj.outcome.name, "t_end": traj.t_end, "steps": len(traj.time_grid) - 1,
           "running_min_distance": traj.running_min_distance,
           "final_positions": traj.final_state.positions}
    return True, res, ["trajectory.csv"], f"simulate: {traj.outcome.name} at t={traj.t_end:.6g}"


def run_collision_tail(cfg, out):
    geom = _geometry(cfg)
    stats_ = collision_tail_experiment(_spec(cfg, geom), cfg.t, cfg.epsilon, cfg.c_grid,
                                       cfg.n_samples, cfg.seed, _opts(cfg))
    write_table_csv(out / "collision_tail.csv", ["c", "count", "frequency", "product"],
                    [stats_.c_grid, stats_.counts, stats_.frequencies, stats_.products])
    d = stats_.to_dict()
    # the asserted law: monotone in c and (-log c) P(d < c) flat within a factor 3
    passed = stats_.monotone and stats_.product_ratio <= 3.0
    return passed, d, ["collision_tail.csv"], (
        f"collision-tail: ratio {stats_.product_ratio:.3g}, A={stats_.fitted_A:.4g}, "
        f"monotone={stats_.monotone}")


def run_measure_preservation(cfg, out):
    geom = _geometry(cfg)
    spec = _spec(cfg, geom)
    if spec.kind == "gibbs":
        rep = gibbs_invariance_test(spec, cfg.t, cfg.epsilon, cfg.n_samples, cfg.seed,
                                    opts=_opts(cfg))
    else:
        rep = measure_preservation_test(spec, cfg.t, cfg.epsilon, cfg.n_samples, cfg.seed,
                                        cfg.arrested, _opts(cfg))
    return rep.passed, rep.to_dict(), [], f"{rep.name}: {'pass' if rep.passed else 'FAIL'}"


def run_koopman_check(cfg, out):
    geom = _geometry(cfg)
    spec = _spec(cfg, geom)
    reports = []
    for k in range(cfg.n_observables):
        r = stream(derive(cfg.seed, "observables"), k)
        f = random_observable(geom, r, delta=cfg.delta)
        g = random_observable(geom, r, delta=cfg.delta)
        reports.append(symmetry_check(f, g, spec, cfg.n_samples, derive(cfg.seed, f"sym{k}")))
        reports.append(unitarity_check(f, spec, cfg.t, cfg.epsilon, cfg.n_samples,
                                       derive(cfg.seed, f"unit{k}"), _opts(cfg)))
    passed = all(r.passed for r in reports)
    return passed, {"reports": [r.to_dict() for r in reports]}, [], (
        f"koopman-check: {sum(r.passed for r in reports)}/{len(reports)} passed")


def run_variance_identity(cfg, out):
    geom = _geometry(cfg)
    try:
        nu = IntensityLaw(**cfg.nu)
    except TypeError as exc:
        raise ConfigError("nu", str(exc)) from exc
    try:
        phi = TestFunction.from_dict(cfg.phi)
    except (KeyError, TypeError) as exc:
        raise ConfigError("phi", str(exc)) from exc
    _need(cfg, "n_vortices")
    v = variance_identity_check(cfg.n_vortices, nu, phi, cfg.n_samples, cfg.seed, geom)
    return v.passed, v.to_dict(), [], (
        f"variance-identity: mc={v.mc:.6g} closed={v.closed_form:.6g} sigma={v.sigma:.3g}")


def run_vepsilon(cfg, out):
    geom = _geometry(cfg)
    spec = _spec(cfg, geom)
    tables = []
    files = []
    for k in range(cfg.n_observables):
        obs = random_observable(geom, stream(derive(cfg.seed, "observables"), k), delta=cfg.delta)
        tab = vepsilon_convergence_experiment(obs, spec, cfg.t, cfg.epsilon_grid, cfg.n_samples,
                                              derive(cfg.seed, f"obs{k}"), _opts(cfg))
        name = f"vepsilon_{k}.csv"
        write_table_csv(out / name, ["epsilon", "distance", "stderr", "arrested_fraction"],
                        [tab.epsilon_grid, tab.distances, tab.stderr, tab.arrested_fraction])
        files.append(name)
        tables.append(tab.to_dict())
    passed = all(t["monotone"] and t["slope"] > 0 for t in tables)
    return passed, {"tables": tables}, files, (
        f"vepsilon-convergence: {len(tables)} observables, pass={passed}")


def run_gibbs_sample(cfg, out):
    geom = _geometry(cfg)
    spec = _spec(cfg, geom)
    if spec.kind == "uniform":
        spec = MeasureSpec("gibbs", geom, spec.n_vortices, spec.intensities, beta=spec.beta,
                           burn_in_sweeps=spec.burn_in_sweeps, thin_sweeps=spec.thin_sweeps)
    ens = sample_batch(spec, cfg.n_samples, cfg.seed)
    S, n, d = ens.positions.shape
    H = hamiltonian_batch(geom, ens.positions, spec.xi)
    header = [f"x_{i + 1}_{k + 1}" for i in range(n) for k in range(d)] + ["H"]
    cols = list(ens.positions.reshape(S, n * d).T) + [H]
    write_table_csv(out / "gibbs_samples.csv", header, cols)
    acc = ens.diagnostics["acceptance"]
    healthy = acc > 0.05 and (acc < 0.95 or ens.diagnostics["step_saturated"])
    return healthy, ens.diagnostics, ["gibbs_samples.csv"], (
        f"gibbs-sample: {S} samples, acceptance {acc:.3f}")


HANDLERS = {"kernels-selftest": run_selftest, "simulate": run_simulate,
            "collision-tail": run_collision_tail, "measure-preservation": run_measure_preservation,
            "koopman-check": run_koopman_check, "variance-identity": run_variance_identity,
            "vepsilon-convergence": run_vepsilon, "gibbs-sample": run_gibbs_sample}


def run(cfg: RunConfig) -> int:
    """Execute one configured run, writing only inside ``cfg.out``."""
    set_threads(cfg.threads)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    passed, results, files, summary = HANDLERS[cfg.subcommand](cfg, out)
    write_json(out / "manifest.json", manifest(cfg, {"passed": passed, **results},
                                               files + ["manifest.json"]))
    print(summary)
    return OK if passed else STAT_FAILURE


def main(argv=None) -> int:
    try:
        cfg = resolve_config(argv)
        return run(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
