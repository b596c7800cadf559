"""Command-line entry point.

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, config, targets
from .errors import ConfigError, InvalidInputError, NumericalError, SteinflowError, UnsupportedKernelError

log = logging.getLogger("steinflow")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


def _out_dir(args, cfg) -> Path:
    out = Path(args.output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=float))


def _write_rows(path: Path, header, rows):
    from .experiments import _write_csv

    _write_csv(path, header, rows)
    return path


def cmd_run(args):
    from .experiments import run_experiment

    cfg = config.load(args.config, config.ExperimentConfig)
    res = run_experiment(cfg, _out_dir(args, cfg))
    last = res.rows[-1]
    _emit({"sigma": res.sigma, "t": last.t, "w1": last.w1, "stein_fisher": last.stein_fisher, "files": res.files})


def cmd_sample(args):
    t = targets.from_config(_target_arg(args.target))
    X = t.sample(args.n, np.random.default_rng(args.seed))
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_rows(out, ["particle_id"] + [f"x_{j + 1}" for j in range(X.shape[1])], [[i, *r] for i, r in enumerate(X)])
    _emit({"n": args.n, "dim": t.dim, "file": str(out)})


def _target_arg(s: str):
    s = s.strip()
    return json.loads(s) if s.startswith("{") else s


def _parse_values(axis, raw: str):
    vals = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if axis == "sigma" and tok == "median":
            vals.append(tok)
        elif axis in ("N", "seed"):
            vals.append(int(tok))
        else:
            vals.append(float(tok))
    return vals


def cmd_sweep(args):
    from .experiments import sweep

    cfg = config.load(args.config, config.ExperimentConfig)
    try:
        values = _parse_values(args.axis, args.values)
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {args.values!r}: {exc}") from exc
    cells = sweep(cfg, args.axis, values, _out_dir(args, cfg), workers=args.workers)
    _emit({"cells": [{"value": c.value, "final_w1": c.rows[-1].w1 if c.rows else None, "error": c.error} for c in cells]})
    if all(c.rows is None for c in cells):
        raise NumericalError("every sweep cell failed")


def cmd_pde(args):
    from .geometry import DensityField1D
    from .meanfield import evolve_pde

    cfg = config.load(args.config, config.PdeConfig)
    t = cfg.build_target()
    grid = cfg.grid.build(t)
    k = cfg.build_kernel(t)
    rho0 = DensityField1D.from_target(targets.from_config(cfg.rho0), grid)
    run = evolve_pde(rho0, k, t, cfg.t_end, cfg.dt, cfg.record_every, keep_snapshots=cfg.snapshot_every > 0)
    out = _out_dir(args, cfg)
    _write_rows(out / "series.csv", ["t", "kl", "stein_fisher", "ratio"], run.series())
    _write_rows(out / "density.csv", ["x", "rho"], zip(grid.nodes, run.density.values))
    if cfg.snapshot_every:
        snap = out / "snapshots"
        snap.mkdir(exist_ok=True)
        for j in range(0, len(run.snapshots), cfg.snapshot_every):
            t_j = run.kl_series[j][0]
            _write_rows(snap / f"density_{j:05d}.csv", ["x", "rho"], zip(grid.nodes, run.snapshots[j].values))
            log.debug("snapshot %d at t=%g", j, t_j)
    _emit({"t": run.time, "kl": run.kl_series[-1][1], "stein_fisher": run.fisher_series[-1][1], "clipped_mass": run.clipped_mass})


def cmd_spectrum(args):
    from .geometry import stein_generator_gap

    cfg = config.load(args.config, config.SpectrumConfig)
    t = cfg.build_target()
    grid = cfg.grid.build(t)
    k = cfg.build_kernel(t)
    rows, gaps = [], {}
    for nb in cfg.n_basis:
        res = stein_generator_gap(k, t, grid, nb, head=cfg.head, null_tol=cfg.null_tol)
        gaps[nb] = {"gap": res.gap, "smallest_raw": float(res.raw[0]), "null_threshold": res.null_threshold}
        rows.extend([nb, i, lam] for i, lam in enumerate(res.spectrum))
    out = _out_dir(args, cfg)
    _write_rows(out / "spectrum.csv", ["n_basis", "index", "eigenvalue"], rows)
    _emit(gaps)


def cmd_hessian(args):
    from .geometry import DensityField1D, hessian_form, metric_form

    cfg = config.load(args.config, config.HessianConfig)
    t = cfg.build_target()
    grid = cfg.grid.build(t)
    k = cfg.build_kernel(t)
    rho = DensityField1D.from_target(targets.from_config(cfg.rho) if cfg.rho is not None else t, grid)
    psi = cfg.psi.build(grid, k)
    h = hessian_form(rho, psi, k, t)
    metric = metric_form(rho, psi, k)
    _emit({"total": h.total, "reg": h.reg, "cost": h.cost, "terms": h.terms, "metric": metric,
           "rayleigh": h.total / metric if metric > 0 else None})


def _read_points(path):
    try:
        data = np.genfromtxt(path, delimiter=",", names=True)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    names = [n for n in data.dtype.names if n.startswith("x_")] or [n for n in data.dtype.names if n != "particle_id"]
    if not names:
        raise ConfigError(f"{path} has no coordinate columns")
    return np.column_stack([np.atleast_1d(data[n]) for n in names])


def cmd_w1(args):
    from .metrics import w1_1d, w1_assignment, w1_sinkhorn

    a, b = _read_points(args.a), _read_points(args.b)
    method = args.method
    if method == "auto":
        method = "exact_1d" if a.shape[1] == 1 else ("assignment" if a.shape[0] == b.shape[0] else "sinkhorn")
    if method == "exact_1d":
        if a.shape[1] != 1:
            raise ConfigError("exact_1d needs 1-D samples")
        out = {"w1": w1_1d(a[:, 0], b[:, 0])}
    elif method == "assignment":
        out = {"w1": w1_assignment(a, b)}
    else:
        res = w1_sinkhorn(a, b, epsilon=args.epsilon)
        out = {"w1": res.value, "converged": res.converged, "iterations": res.iterations}
    out["method"] = method
    _emit(out)


def cmd_geodesic(args):
    from .geometry import DensityField1D, geodesic_shoot

    cfg = config.load(args.config, config.GeodesicConfig)
    t = cfg.build_target()
    grid = cfg.grid.build(t)
    k = cfg.build_kernel(t)
    rho0 = DensityField1D.from_target(targets.from_config(cfg.rho0) if cfg.rho0 is not None else t, grid)
    psi0 = cfg.psi0.build(grid, k)
    res = geodesic_shoot(rho0, psi0, k, cfg.horizon, cfg.dt, unit_speed=cfg.unit_speed, record_every=cfg.record_every)
    out = _out_dir(args, cfg)
    _write_rows(out / "geodesic.csv", ["t", "speed", "mass"], zip(res.times, res.speed, res.mass))
    _write_rows(out / "density.csv", ["x", "rho", "psi"], zip(grid.nodes, res.rho[-1].values, res.psi[-1].values))
    drift = float(np.max(np.abs(res.speed / res.speed[0] - 1))) if res.speed[0] > 0 else 0.0
    _emit({"speed_drift": drift, "mass_drift": float(np.max(np.abs(res.mass - res.mass[0])))})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="steinflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"steinflow {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--output", help="output directory (overrides output_dir)")
        sp.set_defaults(func=func)
        return sp

    with_config("run", cmd_run, "run one particle experiment")
    sp = with_config("sweep", cmd_sweep, "repeat an experiment over p, sigma, N or seed")
    sp.add_argument("--axis", required=True, choices=["p", "sigma", "N", "seed"])
    sp.add_argument("--values", required=True, help="comma-separated values")
    sp.add_argument("--workers", type=int, default=1)
    with_config("pde", cmd_pde, "solve the 1-D mean-field equation")
    with_config("spectrum", cmd_spectrum, "bottom of the Stein generator spectrum")
    with_config("hessian", cmd_hessian, "Hessian quadratic form and metric at a density")
    with_config("geodesic", cmd_geodesic, "shoot a geodesic and track its conserved quantities")

    sp = sub.add_parser("sample", help="exact samples from a target")
    sp.add_argument("--target", default="mixture_1d", help="preset name or JSON object")
    sp.add_argument("--n", type=int, default=100_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", required=True, help="CSV file")
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("w1", help="Wasserstein-1 distance between two point files")
    sp.add_argument("a")
    sp.add_argument("b")
    sp.add_argument("--method", default="auto", choices=["auto", "exact_1d", "assignment", "sinkhorn"])
    sp.add_argument("--epsilon", type=float, default=0.01)
    sp.set_defaults(func=cmd_w1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage errors; usage problems are config errors here
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, InvalidInputError, UnsupportedKernelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SteinflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
