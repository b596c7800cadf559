"""Time steppers for autonomous ODE systems y' = f(y).

Three methods are offered: fixed-step explicit Euler, the Dormand-Prince 5(4)
embedded pair with error control, and a semi-implicit trapezoidal rule solved
by fixed-point iteration.  Steps are clipped so that every requested record
time is hit exactly; the callback sees the state there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidInputError, NonConvergenceError

METHODS = ("euler", "rk45", "trapezoid")

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk45"
    rtol: float = 1e-6
    atol: float = 1e-8
    dt_init: float = 1e-2
    dt_max: float = 1.0
    max_steps: int = 1_000_000
    # fixed-point controls for the trapezoidal rule; fp_tol is measured in
    # units of the (atol + rtol|y|) scale
    fp_tol: float = 1e-2
    fp_max_iter: int = 50

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown integrator {self.method!r}; expected one of {METHODS}")
        if not (self.rtol > 0 and self.atol > 0):
            raise InvalidInputError("rtol and atol must be positive")
        if not (0 < self.dt_init <= self.dt_max):
            raise InvalidInputError("need 0 < dt_init <= dt_max")
        if self.max_steps < 1:
            raise InvalidInputError("max_steps must be positive")


@dataclass
class StepLog:
    accepted: int = 0
    rejected: int = 0
    rhs_evals: int = 0
    last_dt: float = float("nan")
    dts: list = field(default_factory=list)


def _schedule(t0, t1, record_times):
    times = sorted({float(s) for s in (() if record_times is None else record_times) if t0 < s <= t1} | {float(t1)})
    return times


def integrate(
    f: Callable[[np.ndarray], np.ndarray],
    y0: np.ndarray,
    t0: float,
    t1: float,
    cfg: IntegratorConfig,
    record_times=None,
    callback: Callable[[float, np.ndarray], None] | None = None,
):
    """Advance y from t0 to t1.  Returns (y, log).

    ``callback(t, y)`` is invoked at every time in ``record_times`` that lies
    in (t0, t1], and always at t1.
    """
    if not t1 > t0:
        raise InvalidInputError("t_end must exceed the current time")
    stops = _schedule(t0, t1, record_times)
    stepper = {"euler": _run_euler, "rk45": _run_dopri, "trapezoid": _run_trapezoid}[cfg.method]
    return stepper(f, np.array(y0, dtype=float), t0, stops, cfg, callback)


def _eval(f, y, log):
    log.rhs_evals += 1
    return f(y)


def _too_many(log, cfg):
    if log.accepted + log.rejected >= cfg.max_steps:
        raise NonConvergenceError(
            "maximum number of steps exceeded",
            {"last_dt": log.last_dt, "rejected": log.rejected, "accepted": log.accepted},
        )


def _run_euler(f, y, t, stops, cfg, callback):
    log = StepLog()
    for stop in stops:
        while t < stop:
            _too_many(log, cfg)
            dt = min(cfg.dt_init, stop - t)
            y = y + dt * _eval(f, y, log)
            t = stop if stop - t <= dt else t + dt
            log.accepted += 1
            log.last_dt = dt
        if callback:
            callback(t, y)
    return y, log


def _run_dopri(f, y, t, stops, cfg, callback):
    log = StepLog()
    h = cfg.dt_init
    k1 = _eval(f, y, log)
    for stop in stops:
        while t < stop:
            _too_many(log, cfg)
            step = min(h, stop - t)
            K = [k1]
            for s in range(1, 7):
                ys = y + step * sum(a * K[j] for j, a in enumerate(_A[s]) if a != 0.0)
                K.append(_eval(f, ys, log))
            y_new = ys  # the seventh stage point is the 5th-order solution (FSAL)
            err_vec = step * sum(e * K[j] for j, e in enumerate(_E) if e != 0.0)
            scale = cfg.atol + cfg.rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean((err_vec / scale) ** 2)))
            if not np.isfinite(err):
                log.rejected += 1
                h = step * 0.2
                continue
            if err <= 1.0:
                landed = step == stop - t
                t = stop if landed else t + step
                y = y_new
                k1 = K[6]
                log.accepted += 1
                log.last_dt = step
                log.dts.append(step)
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                # a step shortened only to hit a record time says nothing about h
                if not (landed and step < h):
                    h = min(cfg.dt_max, step * fac)
            else:
                log.rejected += 1
                h = step * max(0.2, 0.9 * err ** -0.2)
        if callback:
            callback(t, y)
    return y, log


def _run_trapezoid(f, y, t, stops, cfg, callback):
    log = StepLog()
    h = cfg.dt_init
    fy = _eval(f, y, log)
    for stop in stops:
        while t < stop:
            _too_many(log, cfg)
            step = min(h, stop - t)
            z = y + step * fy
            ok = False
            for _ in range(cfg.fp_max_iter):
                fz = _eval(f, z, log)
                z_next = y + 0.5 * step * (fy + fz)
                delta = np.max(np.abs(z_next - z) / (cfg.atol + cfg.rtol * np.abs(z_next)), initial=0.0)
                z = z_next
                if delta <= cfg.fp_tol:
                    ok = True
                    break
            if not ok or not np.all(np.isfinite(z)):
                log.rejected += 1
                h = step * 0.5
                continue
            t = stop if step == stop - t else t + step
            y = z
            fy = _eval(f, y, log)
            log.accepted += 1
            log.last_dt = step
            h = min(cfg.dt_max, max(h, step))
        if callback:
            callback(t, y)
    return y, log
