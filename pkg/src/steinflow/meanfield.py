"""Finite-volume solver for the 1-D Stein mean-field equation.

    d rho / dt = d/dx ( rho u ),   u(x) = int k(x, y) [rho'(y) + V'(y) rho(y)] dy

Node values are updated through face fluxes F_{i+1/2} = (rho_i u_i +
rho_{i+1} u_{i+1}) / 2 divided by the trapezoid weights, with zero flux at
both ends, so the trapezoidal mass is conserved to round-off.  The bracket
rho' + V' rho is e^{-V} (rho / pi)' and vanishes identically at pi, which
makes the target a discrete fixed point up to the difference error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import IntegratorConfig, ParticleEnsemble, evolve_deterministic
from .errors import InstabilityError, InvalidInputError
from .geometry import DensityField1D, Grid1D, kl_quadrature
from .kernels import Kernel
from .metrics import w1_1d

CLIP_TOL = 1e-10


class _Operator:
    def __init__(self, grid: Grid1D, k: Kernel, target):
        if target.dim != 1:
            raise InvalidInputError("the mean-field solver is one-dimensional")
        x = grid.nodes[:, None]
        self.grid = grid
        self.w = grid.weights
        self.K = k.matrix(x, x)
        self.Vp = target.grad_potential(x)[:, 0]

    def bracket(self, r):
        return self.grid.derivative(r) + self.Vp * r

    def velocity(self, r):
        return self.K @ (self.w * self.bracket(r))

    def rhs(self, r):
        q = r * self.velocity(r)
        F = np.concatenate([[0.0], 0.5 * (q[1:] + q[:-1]), [0.0]])
        return (F[1:] - F[:-1]) / self.w

    def fisher(self, r):
        # int int (rho/pi)'(y) k(y,z) (rho/pi)'(z) dpi dpi, with (rho/pi)' pi = bracket
        b = self.w * self.bracket(r)
        return float(b @ self.K @ b)


def stein_pde_rhs(rho: DensityField1D, k: Kernel, target) -> np.ndarray:
    """Time derivative of the node values under the mean-field equation."""
    return _Operator(rho.grid, k, target).rhs(rho.values)


def mean_field_velocity(rho: DensityField1D, k: Kernel, target) -> np.ndarray:
    """u(x_i); particles move with velocity -u."""
    return _Operator(rho.grid, k, target).velocity(rho.values)


def stein_fisher_quadrature(rho: DensityField1D, k: Kernel, target) -> float:
    return _Operator(rho.grid, k, target).fisher(rho.values)


@dataclass
class PdeRun:
    density: DensityField1D
    time: float
    kl_series: list = field(default_factory=list)
    fisher_series: list = field(default_factory=list)
    ratio_series: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    clipped_mass: float = 0.0

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.kl_series])

    def series(self):
        """Rows (t, kl, stein_fisher, ratio)."""
        return [(t, kl, fi, ra) for (t, kl), (_, fi), (_, ra) in zip(self.kl_series, self.fisher_series, self.ratio_series)]


def _rk4(op, r, dt):
    k1 = op.rhs(r)
    k2 = op.rhs(r + 0.5 * dt * k1)
    k3 = op.rhs(r + 0.5 * dt * k2)
    k4 = op.rhs(r + dt * k3)
    return r + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _clip(r, w):
    neg = r < 0
    if not neg.any():
        return r, 0.0
    lost = float(np.dot(w[neg], -r[neg]))
    if lost > CLIP_TOL:
        raise InstabilityError(f"density went negative (mass {lost:.2e}); reduce dt")
    r = np.where(neg, 0.0, r)
    return r / np.dot(w, r), lost


def evolve_pde(
    rho0: DensityField1D,
    k: Kernel,
    target,
    t_end: float,
    dt: float,
    record_every: int = 1,
    keep_snapshots: bool = False,
) -> PdeRun:
    """RK4 in time; records KL, Stein-Fisher information and their ratio.

    A trial step from rho0 checks that dt is stable for the grid.  Small
    negative undershoots (total mass below 1e-10) are clipped and the density
    renormalized; anything larger raises InstabilityError.
    """
    if not (t_end >= 0 and dt > 0):
        raise InvalidInputError("need t_end >= 0 and dt > 0")
    if record_every < 1:
        raise InvalidInputError("record_every must be positive")
    grid = rho0.grid
    op = _Operator(grid, k, target)
    w = grid.weights
    r = rho0.values.copy()
    trial = _rk4(op, r, dt)
    if not np.all(np.isfinite(trial)) or np.dot(w, np.clip(-trial, 0.0, None)) > CLIP_TOL:
        raise InstabilityError(f"trial step with dt={dt} is unstable on this grid; reduce dt")

    run = PdeRun(rho0, 0.0)

    def record(t, r):
        dens = DensityField1D(grid, r, normalize=False)
        kl = kl_quadrature(dens, target).kl
        fi = op.fisher(r)
        run.kl_series.append((t, kl))
        run.fisher_series.append((t, fi))
        run.ratio_series.append((t, kl / fi if fi > 0 else float("inf")))
        if keep_snapshots:
            run.snapshots.append(dens)

    record(0.0, r)
    n_steps = int(np.ceil(t_end / dt - 1e-9)) if t_end > 0 else 0
    t = 0.0
    for step in range(1, n_steps + 1):
        h = min(dt, t_end - t)
        r = _rk4(op, r, h)
        if not np.all(np.isfinite(r)):
            raise InstabilityError(f"non-finite density at t={t + h:.4g}; reduce dt")
        r, lost = _clip(r, w)
        run.clipped_mass += lost
        t = t_end if step == n_steps else t + h
        if step % record_every == 0 or step == n_steps:
            record(t, r)
    run.density = DensityField1D(grid, r, normalize=False)
    run.time = t
    return run


def quantile_sample(rho: DensityField1D, m: int = 100_000) -> np.ndarray:
    """m deterministic points at the midpoint quantiles of the grid density.

    The CDF is the running trapezoid integral, linear between nodes, so the
    inverse is piecewise linear as well.
    """
    x = rho.grid.nodes
    r = rho.values
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (r[1:] + r[:-1]) * np.diff(x))])
    cdf /= cdf[-1]
    u = (np.arange(m) + 0.5) / m
    # drop nodes inside flat stretches of the CDF so the inverse is well defined
    step = np.diff(cdf) > 0
    keep = np.concatenate([[False], step]) | np.concatenate([step, [False]])
    return np.interp(u, cdf[keep], x[keep])


def particles_vs_pde(
    ns,
    k: Kernel,
    target,
    t_end: float,
    seed: int = 0,
    rho0=None,
    grid: Grid1D | None = None,
    pde_dt: float = 0.01,
    integrator: IntegratorConfig | None = None,
    reference_size: int = 100_000,
):
    """W1 between N-particle SVGD and the mean-field density at t_end.

    ``rho0`` is a 1-D target model used both to draw the i.i.d. initial
    particles and to seed the PDE; default N(1, 1).  Returns [(N, w1)].
    """
    from .targets import Gaussian

    rho0 = rho0 or Gaussian(1.0, 1.0)
    grid = grid or Grid1D.for_target(target)
    dens0 = DensityField1D.from_target(rho0, grid)
    if t_end > 0:
        dens = evolve_pde(dens0, k, target, t_end, pde_dt, record_every=10**9).density
    else:
        dens = dens0
    ref = quantile_sample(dens, reference_size)
    out = []
    for i, n in enumerate(ns):
        rng = np.random.default_rng([seed, i])
        e = ParticleEnsemble(rho0.sample(int(n), rng), rng=rng)
        if t_end > 0:
            evolve_deterministic(e, k, target, t_end, integrator or IntegratorConfig(rtol=1e-6, atol=1e-8))
        out.append((int(n), w1_1d(e.positions[:, 0], ref)))
    return out
