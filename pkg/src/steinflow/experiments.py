"""Experiment orchestration: configured runs, sweeps and their artifacts.

Every output file is a pure function of the configuration, so reruns are
byte-identical.  The manifest lists each file with its sha256 and carries
no timestamps for the same reason.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ExperimentConfig
from .dynamics import ParticleEnsemble, evolve_deterministic, evolve_langevin, evolve_stochastic
from .errors import ConfigError, SteinflowError, UnsupportedKernelError
from .metrics import MetricsRow, histogram, stein_fisher, w1_1d, w1_assignment, w1_sinkhorn

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("t", "grad_evals", "pair_evals", "w1", "stein_fisher")


@dataclass
class RunResult:
    config: ExperimentConfig
    sigma: float | None
    rows: list[MetricsRow]
    positions: np.ndarray
    files: dict[str, str] = field(default_factory=dict)

    @property
    def final_w1(self) -> float:
        return self.rows[-1].w1


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if not isinstance(v, str) else v for v in r])


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, files: list[Path], extra: dict) -> Path:
    entries = {p.relative_to(out).as_posix(): sha256(p) for p in sorted(files)}
    path = out / "manifest.json"
    path.write_text(json.dumps({"version": __version__, **extra, "files": entries}, indent=2, sort_keys=True) + "\n")
    return path


def _w1_function(cfg: ExperimentConfig, ref: np.ndarray):
    d = ref.shape[1]
    method = cfg.w1_method
    if method == "auto":
        method = "exact_1d" if d == 1 else "sinkhorn"
    if method == "exact_1d":
        if d != 1:
            raise ConfigError("w1_method 'exact_1d' needs a 1-D target")
        return lambda X: w1_1d(X[:, 0], ref[:, 0])
    if method == "assignment":
        # equal-size matching against the first N reference points
        return lambda X: w1_assignment(X, ref[: X.shape[0]])
    sub = ref[: min(cfg.sinkhorn_reference, ref.shape[0])]
    return lambda X: w1_sinkhorn(X, sub, epsilon=cfg.sinkhorn_epsilon).value


def _initial_ensemble(cfg: ExperimentConfig, target) -> ParticleEnsemble:
    mean, cov = cfg.init.resolve(target)
    return ParticleEnsemble.gaussian(cfg.n_particles, target.dim, seed=cfg.seed, mean=mean, cov=cov)


def simulate(cfg: ExperimentConfig) -> RunResult:
    """Run the configured dynamics and collect metric rows; writes nothing."""
    target = cfg.build_target()
    e = _initial_ensemble(cfg, target)
    k = kernels.from_config(cfg.kernel, target=target, points=e.positions if e.n > 1 else None)
    sigma = getattr(k, "sigma", None)
    ref = target.sample(cfg.reference_size, np.random.default_rng([cfg.seed, 1]))
    w1 = _w1_function(cfg, ref)
    sf_ok = cfg.stein_fisher and e.n > 2 and k.mixed_derivative_integrable(target.dim)

    def observe(s: ParticleEnsemble) -> MetricsRow:
        sf = None
        if sf_ok:
            try:
                sf = stein_fisher(s, k, target).value
            except UnsupportedKernelError:
                sf = None
        return MetricsRow(s.time, s.grad_evals, s.pair_evals, w1(s.positions), sf)

    rows = [observe(e.snapshot())]
    times = cfg.schedule()
    dyn = cfg.dynamics
    if dyn.kind == "deterministic":
        traj = evolve_deterministic(
            e, k, target, cfg.t_end, cfg.integrator.build(), observe, times, kernel_gradient=dyn.kernel_gradient
        )
    elif dyn.kind == "stochastic":
        traj = evolve_stochastic(e, k, target, cfg.t_end, dyn.dt, observe, times)
    else:
        traj = evolve_langevin(e, target, cfg.t_end, dyn.dt, observe, times)
    rows.extend(traj.rows)
    return RunResult(cfg, sigma, rows, e.positions.copy())


def write_artifacts(result: RunResult, out: Path) -> dict[str, str]:
    cfg = result.config
    out.mkdir(parents=True, exist_ok=True)
    files = []
    p = out / "metrics.csv"
    _write_csv(p, METRIC_COLUMNS, [[r.t, r.grad_evals, r.pair_evals, r.w1, r.stein_fisher] for r in result.rows])
    files.append(p)
    X = result.positions
    p = out / "positions.csv"
    _write_csv(p, ["particle_id"] + [f"x_{j + 1}" for j in range(X.shape[1])], [[i, *row] for i, row in enumerate(X)])
    files.append(p)
    target = cfg.build_target()
    if X.shape[1] == 1:
        lo, hi = target.default_domain()
        edges, dens = histogram(X[:, 0], cfg.histogram_bins, (lo, hi))
        mids = 0.5 * (edges[1:] + edges[:-1])
        pi = target.density(mids[:, None])
        p = out / "histogram.csv"
        _write_csv(p, ["bin_left", "bin_right", "density", "target_density"], zip(edges[:-1], edges[1:], dens, pi))
        files.append(p)
    echo = cfg.model_dump(mode="json")
    echo["resolved"] = {"sigma": result.sigma, "n_steps_recorded": len(result.rows)}
    p = out / "config.json"
    p.write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    files.append(p)
    m = write_manifest(out, files, {"seed": cfg.seed})
    result.files = {f.name: str(f) for f in files + [m]}
    return result.files


def run_experiment(cfg: ExperimentConfig, output_dir: str | Path | None = None) -> RunResult:
    """Simulate and write metrics.csv, positions.csv, histogram.csv (1-D),
    config.json (with the resolved bandwidth) and manifest.json."""
    result = simulate(cfg)
    write_artifacts(result, Path(output_dir or cfg.output_dir))
    return result


# ---------------------------------------------------------------------------
# sweeps


SWEEP_AXES = ("p", "sigma", "N", "seed")


@dataclass
class CellOutcome:
    index: int
    value: object
    rows: list[MetricsRow] | None
    error: str | None = None
    sigma: float | None = None


def _run_cell(args) -> CellOutcome:
    i, value, cfg, out = args
    try:
        res = run_experiment(cfg, out)
        return CellOutcome(i, value, res.rows, None, res.sigma)
    except SteinflowError as exc:
        log.warning("sweep cell %d (%r) failed: %s", i, value, exc)
        return CellOutcome(i, value, None, f"{type(exc).__name__}: {exc}")


def sweep(base: ExperimentConfig, axis: str, values, output_dir: str | Path | None = None, workers: int = 1):
    """Run one experiment per value of ``axis``; failures are recorded, not raised.

    Cells are independent and seeded from their own configuration, so the
    results do not depend on ``workers``.  Writes sweep.csv keyed by
    (value, t) and, for seed sweeps, aggregate.csv with per-time means and
    standard deviations.
    """
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    values = list(values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    out = Path(output_dir or base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(i, v, base.with_value(axis, v), out / f"cell_{i:03d}_{axis}={v}") for i, v in enumerate(values)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(j) for j in jobs]

    rows = []
    for c in cells:
        if c.rows is None:
            rows.append([c.index, str(c.value), "", "", "", "", "", "", f"failed: {c.error}"])
            continue
        for r in c.rows:
            rows.append([c.index, str(c.value), r.t, r.grad_evals, r.pair_evals, r.w1, r.stein_fisher, c.sigma, "ok"])
    header = ["cell", axis, "t", "grad_evals", "pair_evals", "w1", "stein_fisher", "sigma", "status"]
    files = [out / "sweep.csv"]
    _write_csv(files[0], header, rows)
    if axis == "seed":
        files.append(_aggregate(cells, out / "aggregate.csv"))
    for c in cells:
        if c.rows is not None:
            cell_dir = jobs[c.index][3]
            files.extend(sorted(p for p in cell_dir.iterdir() if p.is_file()))
    write_manifest(out, files, {"axis": axis, "values": [str(v) for v in values], "seed": base.seed})
    return cells


def _aggregate(cells, path: Path) -> Path:
    ok = [c for c in cells if c.rows is not None]
    rows = []
    if ok:
        n_t = min(len(c.rows) for c in ok)
        for j in range(n_t):
            t = ok[0].rows[j].t
            w = np.array([c.rows[j].w1 for c in ok], dtype=float)
            sf = np.array([np.nan if c.rows[j].stein_fisher is None else c.rows[j].stein_fisher for c in ok])
            ge = np.array([c.rows[j].grad_evals for c in ok], dtype=float)
            sd = float(w.std(ddof=1)) if w.size > 1 else 0.0
            sf_mean = float(np.nanmean(sf)) if np.isfinite(sf).any() else None
            sf_sd = float(np.nanstd(sf, ddof=1)) if np.isfinite(sf).sum() > 1 else None
            rows.append([t, float(ge.mean()), float(w.mean()), sd, sf_mean, sf_sd, w.size])
    header = ["t", "grad_evals_mean", "w1_mean", "w1_std", "stein_fisher_mean", "stein_fisher_std", "n_seeds"]
    _write_csv(path, header, rows)
    return path
