"""Evaluation metrics: Wasserstein-1 distances, Stein-Fisher estimates, histograms."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .errors import InvalidInputError, UnsupportedKernelError
from .kernels import Kernel, as_points

log = logging.getLogger(__name__)

ASSIGNMENT_MAX = 2048


@dataclass
class MetricsRow:
    t: float
    grad_evals: int
    pair_evals: int
    w1: float | None = None
    stein_fisher: float | None = None
    extras: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        d = asdict(self)
        extras = d.pop("extras")
        d.update(extras)
        return d


def _samples_1d(a, name):
    x = np.asarray(a, dtype=float)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise InvalidInputError(f"{name}: expected 1-D samples, got shape {x.shape}")
    if x.size == 0:
        raise InvalidInputError(f"{name}: empty sample")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name}: non-finite sample values")
    return np.sort(x)


def w1_1d(a, b) -> float:
    """Exact W1 between two 1-D empirical measures by the quantile coupling."""
    a = _samples_1d(a, "a")
    b = _samples_1d(b, "b")
    n, m = a.size, b.size
    if n == m:
        return float(np.mean(np.abs(a - b)))
    # quantile functions are step functions; integrate over the merged partition
    # of [0, 1] into pieces of constant index in both
    u = np.union1d(np.arange(n + 1) / n, np.arange(m + 1) / m)
    mid = 0.5 * (u[:-1] + u[1:])
    ia = np.minimum((mid * n).astype(np.int64), n - 1)
    ib = np.minimum((mid * m).astype(np.int64), m - 1)
    return float(np.sum(np.diff(u) * np.abs(a[ia] - b[ib])))


def _points_pair(a, b):
    A, B = as_points(a), as_points(b)
    if A.shape[1] != B.shape[1]:
        raise InvalidInputError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise InvalidInputError("empty point set")
    return A, B


def w1_assignment(a, b) -> float:
    """Exact W1 between equal-size uniform empirical measures (optimal matching)."""
    A, B = _points_pair(a, b)
    n = A.shape[0]
    if B.shape[0] != n:
        raise InvalidInputError(f"assignment needs equal sizes, got {n} and {B.shape[0]}")
    if n > ASSIGNMENT_MAX:
        raise InvalidInputError(f"assignment limited to n <= {ASSIGNMENT_MAX}; subsample first")
    C = cdist(A, B)
    rows, cols = linear_sum_assignment(C)
    return float(C[rows, cols].sum() / n)


class SinkhornResult(NamedTuple):
    value: float
    converged: bool
    iterations: int
    marginal_error: float


def _round_plan(P, r, c):
    # project an approximate plan onto the transport polytope
    x = np.minimum(r / np.maximum(P.sum(axis=1), 1e-300), 1.0)
    P = P * x[:, None]
    y = np.minimum(c / np.maximum(P.sum(axis=0), 1e-300), 1.0)
    P = P * y[None, :]
    er = r - P.sum(axis=1)
    ec = c - P.sum(axis=0)
    mass = er.sum()
    if mass > 0:
        P = P + np.outer(er, ec) / mass
    return P


def w1_sinkhorn(
    a, b, epsilon: float = 0.01, iters: int = 10_000, tol: float = 1e-4, anneal_iters: int = 20
) -> SinkhornResult:
    """Entropic OT with Euclidean cost, log-domain updates.

    The returned value is the transport cost of the rounded (exactly feasible)
    plan, so it is never below the exact W1.  Non-convergence is flagged, not
    raised.  ``iters`` counts iterations at the target epsilon only; the
    annealing stages before it add ``anneal_iters`` each.  ``tol`` bounds the
    L1 marginal violation before rounding; rounding moves the cost by at most
    tol * max(C).
    """
    if not epsilon > 0:
        raise InvalidInputError("epsilon must be positive")
    A, B = _points_pair(a, b)
    n, m = A.shape[0], B.shape[0]
    C = cdist(A, B)
    r = np.full(n, 1.0 / n)
    c = np.full(m, 1.0 / m)
    log_r, log_c = np.log(r), np.log(c)
    f = np.zeros(n)
    g = np.zeros(m)

    def sweep(eps, f, g):
        f = -eps * logsumexp((g[None, :] - C) / eps + log_c[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - C) / eps + log_r[:, None], axis=0)
        return f, g

    # epsilon scaling: warm-start the potentials along a geometric schedule
    eps = max(float(C.max()), epsilon)
    while eps > epsilon:
        for _ in range(anneal_iters):
            f, g = sweep(eps, f, g)
        eps = max(0.5 * eps, epsilon)
    err = np.inf
    it = 0
    converged = False
    for it in range(1, iters + 1):
        f, g = sweep(epsilon, f, g)
        if it % 10 == 0 or it == iters:
            # after the g update columns are exact; rows carry the error
            logP = (f[:, None] + g[None, :] - C) / epsilon + log_r[:, None] + log_c[None, :]
            err = float(np.abs(np.exp(logsumexp(logP, axis=1)) - r).sum())
            if err <= tol:
                converged = True
                break
    P = np.exp((f[:, None] + g[None, :] - C) / epsilon + log_r[:, None] + log_c[None, :])
    P = _round_plan(P, r, c)
    if not converged:
        log.warning("Sinkhorn stopped after %d iterations with marginal error %.2e", it, err)
    value = max(float(np.sum(P * C)), 0.0)
    return SinkhornResult(value, converged, it, err)


class SteinFisherEstimate(NamedTuple):
    value: float
    stderr: float
    n: int


def _stein_kernel_block(k: Kernel, Y, Z, gY, gZ):
    # kappa(y, z) = gV(y).gV(z) k - gV(y).grad1 k(z, y) - gV(z).grad1 k(y, z) + tr grad1 grad2 k
    Kyz = k.matrix(Y, Z)
    G_yz = k.grad1(Y, Z)  # d/dy k(y, z): (ny, nz, d)
    G_zy = k.grad1(Z, Y)  # d/dz k(z, y): (nz, ny, d)
    try:
        T = k.grad12_trace(Y, Z)
    except NotImplementedError as exc:
        raise UnsupportedKernelError(f"{type(k).__name__} has no mixed second derivative") from exc
    return (
        (gY @ gZ.T) * Kyz
        - np.einsum("yd,zyd->yz", gY, G_zy)
        - np.einsum("zd,yzd->yz", gZ, G_yz)
        + T
    )


def stein_fisher(e, k: Kernel, target, statistic: str = "u", block: int = 1024) -> SteinFisherEstimate:
    """Kernelized estimate of the Stein-Fisher information I_Stein(rho | pi).

    ``e`` is a ParticleEnsemble or an (n, d) array of samples from rho.  The
    default U-statistic averages the Stein kernel over ordered pairs i != j;
    its standard error comes from the first-order Hoeffding projection.  The
    V-statistic ("v") includes the diagonal and so needs a kernel that is
    twice differentiable there.
    """
    X = as_points(getattr(e, "positions", e))
    n = X.shape[0]
    if statistic not in ("u", "v"):
        raise InvalidInputError("statistic must be 'u' or 'v'")
    if statistic == "u" and n < 2:
        raise InvalidInputError("the U-statistic needs at least two samples")
    if not k.mixed_derivative_integrable(X.shape[1]):
        raise UnsupportedKernelError(
            f"{k!r}: the mixed derivative is singular on the diagonal in d={X.shape[1]}, "
            "so off-diagonal Stein-kernel averages are inconsistent"
        )
    if statistic == "v" and not k.smooth_on_diagonal:
        raise UnsupportedKernelError(f"{k!r} is not twice differentiable on the diagonal; use the U-statistic")
    gV = target.grad_potential(X)
    row_sums = np.zeros(n)
    diag = np.zeros(n)
    for s in range(0, n, block):
        sl = slice(s, min(n, s + block))
        H = _stein_kernel_block(k, X[sl], X, gV[sl], gV)
        idx = np.arange(sl.start, sl.stop)
        diag[idx] = H[idx - sl.start, idx]
        row_sums[sl] = H.sum(axis=1)
    if statistic == "v":
        value = row_sums.sum() / n**2
        h1 = row_sums / n
        se = float(np.sqrt(4.0 * np.var(h1, ddof=1) / n)) if n > 1 else float("nan")
        return SteinFisherEstimate(float(value), se, n)
    off = row_sums - diag
    value = off.sum() / (n * (n - 1))
    h1 = off / (n - 1)
    se = float(np.sqrt(4.0 * np.var(h1, ddof=1) / n)) if n > 2 else float("nan")
    return SteinFisherEstimate(float(value), se, n)


def histogram(samples, bins: int, range: tuple[float, float]):
    """Density-normalized histogram over ``range``; returns (edges, densities).

    Samples outside the range are dropped before normalization, so the
    densities integrate to 1 over the range whenever any sample falls in it.
    """
    if bins < 1:
        raise InvalidInputError("bins must be at least 1")
    lo, hi = float(range[0]), float(range[1])
    if not hi > lo:
        raise InvalidInputError("histogram range must have positive width")
    x = np.asarray(samples, dtype=float).ravel()
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    total = counts.sum()
    dens = counts / (total * np.diff(edges)) if total else np.zeros(bins)
    return edges, dens
