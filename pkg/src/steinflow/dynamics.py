"""Particle dynamics: deterministic SVGD, stochastic SVGD and Langevin.

Costs are tracked on the ensemble.  ``grad_evals`` counts potential gradients
(N per right-hand side) and ``pair_evals`` counts kernel pairs (N^2 per
right-hand side), so runs with different integrators can be compared on the
same cost axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import InvalidInputError, NumericalBlowupError
from .integrators import IntegratorConfig, StepLog, integrate
from .kernels import Kernel, as_points
from .linalg import gram_sqrt

__all__ = [
    "ParticleEnsemble",
    "IntegratorConfig",
    "Trajectory",
    "svgd_velocity",
    "stochastic_drift",
    "evolve_deterministic",
    "stochastic_step",
    "evolve_stochastic",
    "langevin_step",
    "evolve_langevin",
]


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    time: float = 0.0
    grad_evals: int = 0
    pair_evals: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)

    def __post_init__(self):
        self.positions = as_points(self.positions).copy()
        if self.positions.shape[0] < 1:
            raise InvalidInputError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(self.positions)):
            raise InvalidInputError("initial positions must be finite")

    @classmethod
    def gaussian(cls, n: int, d: int = 1, seed: int = 0, mean=None, cov=None) -> ParticleEnsemble:
        """n i.i.d. draws from N(mean, cov), standard normal by default.

        The same generator keeps driving any later stochastic steps.
        """
        rng = np.random.default_rng(seed)
        mean = np.zeros(d) if mean is None else np.broadcast_to(np.asarray(mean, float), (d,))
        z = rng.standard_normal((n, d))
        if cov is not None:
            cov = np.asarray(cov, float)
            L = np.linalg.cholesky(cov * np.eye(d) if cov.ndim == 0 else cov)
            z = z @ L.T
        return cls(mean + z, rng=rng)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> ParticleEnsemble:
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return ParticleEnsemble(self.positions.copy(), self.time, self.grad_evals, self.pair_evals, rng)

    def snapshot(self) -> ParticleEnsemble:
        """Frozen copy for observers; positions are read-only."""
        snap = self.copy()
        snap.positions.flags.writeable = False
        return snap


@dataclass
class Trajectory:
    ensemble: ParticleEnsemble
    rows: list = field(default_factory=list)
    time_averages: dict = field(default_factory=dict)
    log: StepLog | None = None


def _check_finite(v: np.ndarray, what: str):
    bad = ~np.all(np.isfinite(v), axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise NumericalBlowupError(f"non-finite {what} at particle {i}", index=i)


def _interaction(X, k: Kernel, target, kernel_gradient: str):
    # returns (sum_j k(x_i,x_j) gradV(x_j), sum_j D k) with D the kernel
    # derivative appearing in the chosen form, both (N, d)
    gV = target.grad_potential(X)
    _check_finite(gV, "potential gradient")
    if kernel_gradient not in ("first", "second"):
        raise InvalidInputError(f"kernel_gradient must be 'first' or 'second', got {kernel_gradient!r}")
    Kx, G = k.matrix_and_grad1(X, X)
    # "second": grad of k(x_i, x_j) in x_j, i.e. grad1(x_j, x_i)
    Dk = G.sum(axis=1) if kernel_gradient == "first" else G.sum(axis=0)
    return Kx @ gV, Dk


def svgd_velocity(e: ParticleEnsemble, k: Kernel, target, kernel_gradient: str = "first") -> np.ndarray:
    """v_i = -(1/N) sum_j [grad_1 k(x_i, x_j) + k(x_i, x_j) grad V(x_j)].

    With ``kernel_gradient="second"`` the first term becomes
    -grad_2 k(x_i, x_j), the form consistent with the mean-field equation for
    kernels that are not translation invariant.  The two agree whenever k is.
    """
    return _velocity(e.positions, e, k, target, kernel_gradient)


def _velocity(X, e, k, target, kernel_gradient="first"):
    n = X.shape[0]
    KgV, Dk = _interaction(X, k, target, kernel_gradient)
    e.grad_evals += n
    e.pair_evals += n * n
    v = -(KgV + Dk) / n if kernel_gradient == "first" else (Dk - KgV) / n
    _check_finite(v, "velocity")
    return v


def stochastic_drift(e: ParticleEnsemble, k: Kernel, target) -> np.ndarray:
    """(1/N) sum_j [-k(x_i, x_j) grad V(x_j) + grad_{x_j} k(x_i, x_j)]."""
    return _velocity(e.positions, e, k, target, "second")


def _observe(observer, e, rows):
    if observer is None:
        return
    out = observer(e.snapshot())
    if out is not None:
        rows.append(out)


def evolve_deterministic(
    e: ParticleEnsemble,
    k: Kernel,
    target,
    t_end: float,
    cfg: IntegratorConfig | None = None,
    observer: Callable | None = None,
    record_times=None,
    kernel_gradient: str = "first",
) -> Trajectory:
    """Integrate the SVGD ODE from ``e.time`` to ``t_end`` in place.

    ``observer`` receives an immutable snapshot at each record time (and at
    t_end); whatever it returns, if not None, is collected in ``rows``.
    """
    cfg = cfg or IntegratorConfig()
    shape = e.positions.shape
    rows: list = []

    def rhs(y):
        return _velocity(y.reshape(shape), e, k, target, kernel_gradient).ravel()

    def cb(t, y):
        e.positions = y.reshape(shape).copy()
        e.time = t
        _observe(observer, e, rows)

    y, log = integrate(rhs, e.positions.ravel(), e.time, t_end, cfg, record_times, cb)
    e.positions = y.reshape(shape).copy()
    e.time = float(t_end)
    return Trajectory(e, rows, {}, log)


def stochastic_step(e: ParticleEnsemble, k: Kernel, target, dt: float, xi: np.ndarray | None = None, method: str = "lapack") -> ParticleEnsemble:
    """One Euler-Maruyama step of stochastic SVGD, in place.

    The noise is sqrt(2 dt) S xi with S the square root of the N x N matrix
    G_ij = k(x_i, x_j)/N acting on each coordinate.  ``xi`` (shape (N, d))
    overrides the draw from the ensemble's generator.
    """
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    X = e.positions
    n = X.shape[0]
    drift = stochastic_drift(e, k, target)
    S = gram_sqrt(k.matrix(X, X) / n, method=method)
    if xi is None:
        xi = e.rng.standard_normal(X.shape)
    X_new = X + dt * drift + np.sqrt(2.0 * dt) * (S @ xi)
    _check_finite(X_new, "position")
    e.positions = X_new
    e.time += dt
    return e


def langevin_step(e: ParticleEnsemble, target, dt: float, xi: np.ndarray | None = None) -> ParticleEnsemble:
    """Independent overdamped Langevin steps dX = -grad V dt + sqrt(2 dt) xi."""
    if not dt > 0:
        raise InvalidInputError("dt must be positive")
    X = e.positions
    g = target.grad_potential(X)
    e.grad_evals += X.shape[0]
    if xi is None:
        xi = e.rng.standard_normal(X.shape)
    X_new = X - dt * g + np.sqrt(2.0 * dt) * xi
    _check_finite(X_new, "position")
    e.positions = X_new
    e.time += dt
    return e


def _evolve_em(step, e, t_end, dt, observer, record_times, test_functions):
    if not t_end > e.time:
        raise InvalidInputError("t_end must exceed the current time")
    t0 = e.time
    stops = sorted({float(s) for s in (() if record_times is None else record_times) if t0 < s <= t_end} | {float(t_end)})
    sums = {name: 0.0 for name in (test_functions or {})}
    rows: list = []
    for stop in stops:
        while e.time < stop - 1e-12 * max(1.0, abs(stop)):
            h = min(dt, stop - e.time)
            # left-point rule for the running time average
            for name, phi in (test_functions or {}).items():
                sums[name] += h * float(np.mean(phi(e.positions)))
            step(h)
        e.time = stop
        _observe(observer, e, rows)
    span = e.time - t0
    return Trajectory(e, rows, {name: s / span for name, s in sums.items()})


def evolve_stochastic(
    e: ParticleEnsemble,
    k: Kernel,
    target,
    t_end: float,
    dt: float,
    observer: Callable | None = None,
    record_times=None,
    test_functions: Mapping[str, Callable] | None = None,
) -> Trajectory:
    """Repeated stochastic SVGD steps; also returns time averages.

    Each test function maps the (N, d) position array to N values; the
    reported average is (1/T) * integral over the run of their particle mean.
    """
    return _evolve_em(lambda h: stochastic_step(e, k, target, h), e, t_end, dt, observer, record_times, test_functions)


def evolve_langevin(
    e: ParticleEnsemble,
    target,
    t_end: float,
    dt: float,
    observer: Callable | None = None,
    record_times=None,
    test_functions: Mapping[str, Callable] | None = None,
) -> Trajectory:
    return _evolve_em(lambda h: langevin_step(e, target, h), e, t_end, dt, observer, record_times, test_functions)
