"""Validated JSON configurations for experiments and the CLI subcommands."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import kernels, targets
from .errors import ConfigError, InvalidInputError
from .integrators import METHODS, IntegratorConfig


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class IntegratorSettings(_Model):
    method: Literal["euler", "rk45", "trapezoid"] = "rk45"
    rtol: float = Field(1e-4, gt=0)
    atol: float = Field(1e-6, gt=0)
    dt_init: float = Field(1e-2, gt=0)
    dt_max: float = Field(1.0, gt=0)
    max_steps: int = Field(1_000_000, ge=1)

    @model_validator(mode="after")
    def _order(self):
        if self.dt_init > self.dt_max:
            raise ValueError("dt_init must not exceed dt_max")
        return self

    def build(self) -> IntegratorConfig:
        assert self.method in METHODS
        return IntegratorConfig(**self.model_dump())


class Deterministic(_Model):
    kind: Literal["deterministic"] = "deterministic"
    kernel_gradient: Literal["first", "second"] = "first"


class Stochastic(_Model):
    kind: Literal["stochastic"]
    dt: float = Field(gt=0)


class Langevin(_Model):
    kind: Literal["langevin"]
    dt: float = Field(gt=0)


class InitLaw(_Model):
    """Initial particle law.

    ``standard_normal``; ``gaussian`` with explicit mean and covariance; or
    ``match_target``, the Gaussian with the target's mean and covariance.
    """

    kind: Literal["standard_normal", "gaussian", "match_target"] = "standard_normal"
    mean: list[float] | None = None
    cov: list[list[float]] | None = None

    @model_validator(mode="after")
    def _fields(self):
        if self.kind == "gaussian" and (self.mean is None or self.cov is None):
            raise ValueError("a gaussian init needs mean and cov")
        if self.kind != "gaussian" and (self.mean is not None or self.cov is not None):
            raise ValueError(f"mean/cov only apply to a gaussian init, not {self.kind!r}")
        return self

    def resolve(self, target) -> tuple[np.ndarray, np.ndarray]:
        d = target.dim
        if self.kind == "standard_normal":
            return np.zeros(d), np.eye(d)
        if self.kind == "match_target":
            return target_moments(target)
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.shape != (d,) or cov.shape != (d, d):
            raise ConfigError(f"init mean/cov shapes {mean.shape}, {cov.shape} do not match d={d}")
        return mean, cov


def target_moments(target) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of a Gaussian mixture."""
    w, mu, cov = target.weights, target.means, target.covs
    mean = w @ mu
    dev = mu - mean
    return mean, np.einsum("k,kij->ij", w, cov) + np.einsum("k,ki,kj->ij", w, dev, dev)


TargetSpec = Union[str, dict[str, Any]]


def _check_target(v):
    try:
        targets.from_config(v)
    except (InvalidInputError, KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"bad target: {exc}") from exc
    return v


def _check_kernel(v):
    if not isinstance(v, dict) or "kind" not in v:
        raise ValueError("kernel needs a 'kind'")
    return v


class ExperimentConfig(_Model):
    target: TargetSpec = "mixture_1d"
    kernel: dict[str, Any] = Field(default_factory=lambda: {"kind": "p_exponential", "p": 2.0, "sigma": "median"})
    n_particles: int = Field(200, ge=1)
    t_end: float = Field(2000.0, gt=0)
    integrator: IntegratorSettings = IntegratorSettings()
    dynamics: Union[Deterministic, Stochastic, Langevin] = Field(default_factory=Deterministic, discriminator="kind")
    init: InitLaw = InitLaw()
    seed: int = Field(0, ge=0)
    # explicit record times, or n_records evenly spaced ones ending at t_end
    record_times: list[float] | None = None
    n_records: int = Field(20, ge=1)
    reference_size: int = Field(100_000, ge=1)
    w1_method: Literal["auto", "exact_1d", "assignment", "sinkhorn"] = "auto"
    sinkhorn_epsilon: float = Field(0.01, gt=0)
    sinkhorn_reference: int = Field(2000, ge=1)
    stein_fisher: bool = True
    histogram_bins: int = Field(100, ge=1)
    output_dir: str = "out"

    _check_target = field_validator("target")(classmethod(lambda cls, v: _check_target(v)))
    _check_kernel = field_validator("kernel")(classmethod(lambda cls, v: _check_kernel(v)))

    @model_validator(mode="after")
    def _schedule(self):
        if self.record_times is not None:
            r = np.asarray(self.record_times, dtype=float)
            if r.size == 0 or np.any(np.diff(r) <= 0):
                raise ValueError("record_times must be strictly increasing")
            if r[0] <= 0 or r[-1] > self.t_end:
                raise ValueError("record_times must lie in (0, t_end]")
        return self

    def schedule(self) -> list[float]:
        if self.record_times is not None:
            return [float(t) for t in self.record_times]
        return [float(t) for t in np.linspace(0.0, self.t_end, self.n_records + 1)[1:]]

    def build_target(self):
        return targets.from_config(self.target)

    def with_value(self, axis: str, value) -> ExperimentConfig:
        """Copy with one sweep parameter replaced."""
        if axis == "p":
            return self.model_copy(update={"kernel": {**self.kernel, "kind": "p_exponential", "p": float(value)}})
        if axis == "sigma":
            sigma = value if value == "median" else float(value)
            return self.model_copy(update={"kernel": {**self.kernel, "sigma": sigma}})
        if axis == "N":
            return self.model_copy(update={"n_particles": int(value)})
        if axis == "seed":
            return self.model_copy(update={"seed": int(value)})
        raise ConfigError(f"sweep axis must be one of p, sigma, N, seed; got {axis!r}")


class GridSettings(_Model):
    n: int = Field(1024, ge=5)
    lo: float | None = None
    hi: float | None = None
    width: float = Field(10.0, gt=0)

    @model_validator(mode="after")
    def _both(self):
        if (self.lo is None) != (self.hi is None):
            raise ValueError("give both lo and hi, or neither")
        if self.lo is not None and not self.hi > self.lo:
            raise ValueError("need hi > lo")
        return self

    def build(self, target):
        from .geometry import Grid1D

        if self.lo is not None:
            return Grid1D(self.lo, self.hi, self.n)
        return Grid1D.for_target(target, self.n, self.width)


class _GridJob(_Model):
    target: TargetSpec = "standard_normal"
    kernel: dict[str, Any] = Field(default_factory=lambda: {"kind": "p_exponential", "p": 2.0, "sigma": 1.0})
    grid: GridSettings = GridSettings()
    output_dir: str = "out"

    _check_target = field_validator("target")(classmethod(lambda cls, v: _check_target(v)))
    _check_kernel = field_validator("kernel")(classmethod(lambda cls, v: _check_kernel(v)))

    def build_target(self):
        t = targets.from_config(self.target)
        if t.dim != 1:
            raise ConfigError("grid computations are one-dimensional")
        return t

    def build_kernel(self, target):
        if self.kernel.get("sigma") == "median":
            raise ConfigError("sigma='median' needs particles; give a number for grid computations")
        return kernels.from_config(self.kernel, target=target)


class PdeConfig(_GridJob):
    rho0: TargetSpec = Field(default_factory=lambda: {"kind": "gaussian", "mean": [1.0], "cov": [[1.0]]})
    t_end: float = Field(4.0, ge=0)
    dt: float = Field(0.01, gt=0)
    record_every: int = Field(10, ge=1)
    snapshot_every: int = Field(0, ge=0)


class SpectrumConfig(_GridJob):
    n_basis: list[int] = Field(default_factory=lambda: [128, 256, 512])
    head: int = Field(10, ge=1)
    null_tol: float = Field(1e-10, ge=0)


class FieldSpec(_Model):
    """A test function Psi on the grid.

    ``polynomial`` with coefficients c_0..c_m; ``sine`` a sin(f x + phase);
    ``section`` the kernel section k(x0, .).
    """

    kind: Literal["polynomial", "sine", "section"] = "polynomial"
    coeffs: list[float] = Field(default_factory=lambda: [0.0, 1.0])
    amplitude: float = 1.0
    frequency: float = 1.0
    phase: float = 0.0
    x0: float = 0.0

    def build(self, grid, k):
        from .geometry import ScalarField1D, kernel_section

        x = grid.nodes
        if self.kind == "section":
            return kernel_section(k, self.x0, grid)
        if self.kind == "sine":
            a, f, ph = self.amplitude, self.frequency, self.phase
            return ScalarField1D(grid, a * np.sin(f * x + ph), a * f * np.cos(f * x + ph))
        c = np.asarray(self.coeffs, dtype=float)
        poly = np.polynomial.Polynomial(c)
        return ScalarField1D(grid, poly(x), poly.deriv()(x))


class HessianConfig(_GridJob):
    rho: TargetSpec | None = None
    psi: FieldSpec = FieldSpec()


class GeodesicConfig(_GridJob):
    rho0: TargetSpec | None = None
    psi0: FieldSpec = Field(default_factory=lambda: FieldSpec(kind="sine", frequency=2.0))
    horizon: float = Field(1.0, gt=0)
    dt: float = Field(1e-3, gt=0)
    unit_speed: bool = True
    record_every: int = Field(10, ge=1)


def load(path, model: type[_Model]):
    """Read and validate a JSON config; every failure becomes ConfigError."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return parse(raw, model)


def parse(raw, model: type[_Model]):
    try:
        return model.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
