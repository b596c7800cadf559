"""Positive-definite kernels, Gram matrices and the median bandwidth rule.

Every kernel works on batches: ``matrix(X, Y)`` returns the (n, m) matrix of
values, ``grad1(X, Y)`` the (n, m, d) array of gradients in the first
argument and ``grad12_trace(X, Y)`` the trace of the mixed second derivative,
which is what the kernelized Stein discrepancy needs.  Points are given as
arrays of shape (n, d); 1-D input of shape (n,) is read as n points in d = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import DegenerateConfigurationError, InvalidInputError
from .linalg import gram_sqrt  # noqa: F401  (re-exported)

if TYPE_CHECKING:
    from .targets import GaussianMixture


def as_points(x) -> np.ndarray:
    """Coerce ``x`` into an (n, d) float array."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a[:, None]
    if a.ndim != 2:
        raise InvalidInputError(f"points must be 1-D or 2-D, got shape {a.shape}")
    return a


def _as_point(x) -> np.ndarray:
    a = np.atleast_1d(np.asarray(x, dtype=float))
    if a.ndim != 1:
        raise InvalidInputError(f"a point must be a scalar or a vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("kernel arguments must be finite")
    return a[None, :]


class Kernel:
    """Base class.  Subclasses implement the three batched primitives."""

    translation_invariant = False
    dimension: int | None = None  # None: any dimension
    # whether second derivatives exist on the diagonal x = y
    smooth_on_diagonal = True

    def mixed_derivative_integrable(self, d: int) -> bool:
        """True when tr grad1 grad2 k is a locally integrable function in d dims.

        Off-diagonal Stein-kernel averages are only consistent in that case;
        otherwise the distributional derivative carries mass on the diagonal.
        """
        return True

    def matrix(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    def grad1(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    def grad12_trace(self, X, Y) -> np.ndarray:
        raise NotImplementedError

    def matrix_and_grad1(self, X, Y) -> tuple[np.ndarray, np.ndarray]:
        """Both at once; subclasses share the pairwise work where they can."""
        return self.matrix(X, Y), self.grad1(X, Y)

    def grad2(self, X, Y) -> np.ndarray:
        """Gradient in the second argument, via symmetry of k."""
        return np.swapaxes(self.grad1(Y, X), 0, 1)

    def _check_dim(self, *arrays):
        if self.dimension is None:
            return
        for a in arrays:
            if a.shape[1] != self.dimension:
                raise InvalidInputError(
                    f"{type(self).__name__} is defined for d={self.dimension}, got d={a.shape[1]}"
                )


@dataclass(frozen=True)
class PExponential(Kernel):
    """k(x, y) = exp(-|x - y|^p / sigma^p) with 0 < p <= 2.

    ``sigma = inf`` gives the constant kernel k = 1, handy for tests.
    """

    p: float = 2.0
    sigma: float = 1.0
    translation_invariant = True

    def __post_init__(self):
        if not (0.0 < self.p <= 2.0):
            raise InvalidInputError(f"p must lie in (0, 2], got {self.p}")
        if not self.sigma > 0.0:
            raise InvalidInputError(f"sigma must be positive, got {self.sigma}")

    def _diff(self, X, Y):
        X, Y = as_points(X), as_points(Y)
        u = X[:, None, :] - Y[None, :, :]
        r = np.abs(u[:, :, 0]) if u.shape[2] == 1 else np.sqrt(np.einsum("ijk,ijk->ij", u, u))
        return u, r

    @property
    def smooth_on_diagonal(self):
        return self.p == 2.0 or math.isinf(self.sigma)

    def mixed_derivative_integrable(self, d: int) -> bool:
        # the trace behaves like r^(p-2) near the diagonal
        return self.smooth_on_diagonal or self.p > 2.0 - d

    def _profile(self, r):
        return np.exp(-((r / self.sigma) ** self.p))

    def matrix(self, X, Y):
        _, r = self._diff(X, Y)
        return self._profile(r)

    def grad1(self, X, Y):
        return self.matrix_and_grad1(X, Y)[1]

    def matrix_and_grad1(self, X, Y):
        u, r = self._diff(X, Y)
        k = self._profile(r)
        s = self.sigma**self.p
        if self.p == 2.0:
            coef = -2.0 / s * k
        else:
            # f'(r) / r; the diagonal (r = 0) takes the zero convention
            with np.errstate(divide="ignore", invalid="ignore"):
                rp = 1.0 / r if self.p == 1.0 else r ** (self.p - 2.0)
                coef = np.where(r > 0, -self.p / s * rp * k, 0.0)
        return k, coef[:, :, None] * u

    def grad12_trace(self, X, Y):
        u, r = self._diff(X, Y)
        d = u.shape[2]
        k = self._profile(r)
        p, s = self.p, self.sigma**self.p
        if p == 2.0:
            return (2.0 * d / s - 4.0 * r**2 / s**2) * k
        out = np.zeros_like(r)
        nz = r > 0
        rn, kn = r[nz], k[nz]
        f1 = -p / s * rn ** (p - 1.0) * kn
        f2 = (-p * (p - 1.0) / s * rn ** (p - 2.0) + p**2 / s**2 * rn ** (2.0 * p - 2.0)) * kn
        out[nz] = -(f2 + (d - 1.0) * f1 / rn)
        return out


def gaussian(sigma: float = 1.0) -> PExponential:
    return PExponential(p=2.0, sigma=sigma)


def laplace(sigma: float = 1.0) -> PExponential:
    return PExponential(p=1.0, sigma=sigma)


@dataclass(frozen=True)
class WeightedMatern1D(Kernel):
    """k(x, y) = pi(x)^{-1/2} exp(-|x - y|) pi(y)^{-1/2} for a 1-D target pi."""

    target: "GaussianMixture"
    dimension = 1
    smooth_on_diagonal = False

    def mixed_derivative_integrable(self, d: int) -> bool:
        # e^{-|x-y|} has a point mass in its mixed derivative
        return False

    def _parts(self, X, Y):
        X, Y = as_points(X), as_points(Y)
        self._check_dim(X, Y)
        x, y = X[:, 0], Y[:, 0]
        # pi^{-1/2} = exp(V / 2) because V = -log pi exactly
        ax = np.exp(0.5 * self.target.potential(X))
        ay = np.exp(0.5 * self.target.potential(Y))
        dx = x[:, None] - y[None, :]
        k = ax[:, None] * np.exp(-np.abs(dx)) * ay[None, :]
        return X, Y, dx, k

    def matrix(self, X, Y):
        return self._parts(X, Y)[3]

    def grad1(self, X, Y):
        X, _, dx, k = self._parts(X, Y)
        dV = self.target.grad_potential(X)[:, 0]
        return (k * (0.5 * dV[:, None] - np.sign(dx)))[:, :, None]

    def grad12_trace(self, X, Y):
        X, Y, dx, k = self._parts(X, Y)
        s = np.sign(dx)
        dVx = self.target.grad_potential(X)[:, 0]
        dVy = self.target.grad_potential(Y)[:, 0]
        return k * (0.5 * dVx[:, None] - s) * (0.5 * dVy[None, :] + s)


@dataclass(frozen=True)
class Polynomial1D(Kernel):
    """k(x, y) = x y, or x y + 1 with ``include_offset``.  Not ISPD on its own."""

    include_offset: bool = False
    dimension = 1

    def matrix(self, X, Y):
        X, Y = as_points(X), as_points(Y)
        self._check_dim(X, Y)
        k = X[:, 0][:, None] * Y[:, 0][None, :]
        return k + 1.0 if self.include_offset else k

    def grad1(self, X, Y):
        X, Y = as_points(X), as_points(Y)
        self._check_dim(X, Y)
        return np.broadcast_to(Y[:, 0][None, :], (X.shape[0], Y.shape[0]))[:, :, None].copy()

    def grad12_trace(self, X, Y):
        X, Y = as_points(X), as_points(Y)
        self._check_dim(X, Y)
        return np.ones((X.shape[0], Y.shape[0]))


@dataclass(frozen=True)
class WeightedSum(Kernel):
    """Positive combination sum_i w_i k_i."""

    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        terms = tuple((float(w), k) for w, k in self.terms)
        if not terms:
            raise InvalidInputError("WeightedSum needs at least one term")
        for w, k in terms:
            if not w > 0:
                raise InvalidInputError(f"WeightedSum weights must be positive, got {w}")
            if not isinstance(k, Kernel):
                raise InvalidInputError(f"not a kernel: {k!r}")
        object.__setattr__(self, "terms", terms)

    @property
    def translation_invariant(self):
        return all(k.translation_invariant for _, k in self.terms)

    @property
    def smooth_on_diagonal(self):
        return all(k.smooth_on_diagonal for _, k in self.terms)

    def mixed_derivative_integrable(self, d: int) -> bool:
        return all(k.mixed_derivative_integrable(d) for _, k in self.terms)

    @property
    def dimension(self):
        dims = {k.dimension for _, k in self.terms} - {None}
        return dims.pop() if dims else None

    def matrix(self, X, Y):
        return sum(w * k.matrix(X, Y) for w, k in self.terms)

    def grad1(self, X, Y):
        return sum(w * k.grad1(X, Y) for w, k in self.terms)

    def grad12_trace(self, X, Y):
        return sum(w * k.grad12_trace(X, Y) for w, k in self.terms)


def evaluate(k: Kernel, x, y) -> float:
    """k(x, y) for two single points."""
    return float(k.matrix(_as_point(x), _as_point(y))[0, 0])


def grad1(k: Kernel, x, y) -> np.ndarray:
    """Gradient of k(x, y) with respect to x, as a vector of length d."""
    return k.grad1(_as_point(x), _as_point(y))[0, 0].copy()


def gram(k: Kernel, points, scale: float = 1.0) -> np.ndarray:
    """G_ij = scale * k(x_i, x_j), symmetrized against round-off."""
    if not scale > 0:
        raise InvalidInputError(f"scale must be positive, got {scale}")
    X = as_points(points)
    G = scale * k.matrix(X, X)
    return 0.5 * (G + G.T)


def median_bandwidth(points, p: float, n: int | None = None) -> float:
    """Median heuristic generalized to p-exponential kernels.

    sigma^p = med^p / log(max(n, 2)), with med the median pairwise Euclidean
    distance.  At p = 2 this is the usual h = med^2 / log n rule.
    """
    X = as_points(points)
    if X.shape[0] < 2:
        raise DegenerateConfigurationError("median heuristic needs at least two points")
    if not (0.0 < p <= 2.0):
        raise InvalidInputError(f"p must lie in (0, 2], got {p}")
    n = X.shape[0] if n is None else n
    med = float(np.median(pdist(X)))
    if med <= 0.0:
        raise DegenerateConfigurationError("median pairwise distance is zero")
    return med / math.log(max(n, 2)) ** (1.0 / p)


def from_config(cfg: dict, target=None, points=None) -> Kernel:
    """Build a kernel from its JSON description.

    ``{"kind": "p_exponential", "p": 1.0, "sigma": "median" | number}``,
    ``{"kind": "weighted_matern"}``, ``{"kind": "polynomial", "offset": true}``
    and ``{"kind": "sum", "terms": [{"weight": w, "kernel": {...}}, ...]}``.
    A median sigma is resolved against ``points``.
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise InvalidInputError(f"kernel config needs a 'kind': {cfg!r}")
    kind = cfg["kind"]
    if kind in ("p_exponential", "gaussian", "laplace"):
        p = float(cfg.get("p", {"gaussian": 2.0, "laplace": 1.0}.get(kind, 2.0)))
        sigma = cfg.get("sigma", 1.0)
        if sigma == "median":
            if points is None:
                raise InvalidInputError("sigma='median' needs the particle positions")
            sigma = median_bandwidth(points, p)
        return PExponential(p=p, sigma=float(sigma))
    if kind == "weighted_matern":
        if target is None:
            raise InvalidInputError("weighted_matern needs a target")
        return WeightedMatern1D(target)
    if kind == "polynomial":
        return Polynomial1D(include_offset=bool(cfg.get("offset", False)))
    if kind == "sum":
        terms = [
            (float(t["weight"]), from_config(t["kernel"], target=target, points=points))
            for t in cfg.get("terms", [])
        ]
        return WeightedSum(tuple(terms))
    raise InvalidInputError(f"unknown kernel kind {kind!r}")


def to_config(k: Kernel) -> dict:
    if isinstance(k, PExponential):
        return {"kind": "p_exponential", "p": k.p, "sigma": k.sigma}
    if isinstance(k, WeightedMatern1D):
        return {"kind": "weighted_matern"}
    if isinstance(k, Polynomial1D):
        return {"kind": "polynomial", "offset": k.include_offset}
    if isinstance(k, WeightedSum):
        return {"kind": "sum", "terms": [{"weight": w, "kernel": to_config(t)} for w, t in k.terms]}
    raise InvalidInputError(f"cannot serialize {k!r}")


__all__ = [
    "Kernel",
    "PExponential",
    "WeightedMatern1D",
    "Polynomial1D",
    "WeightedSum",
    "gaussian",
    "laplace",
    "evaluate",
    "grad1",
    "gram",
    "gram_sqrt",
    "median_bandwidth",
    "from_config",
    "to_config",
    "as_points",
]
