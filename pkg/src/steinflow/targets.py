"""Gaussian and Gaussian-mixture targets pi = exp(-V).

Densities are stored normalized, so V = -log pi carries the normalizing
constant and KL values computed against it are absolute.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInputError


class GaussianMixture:
    """Finite mixture sum_k w_k N(mu_k, Sigma_k) in d dimensions.

    All evaluation methods accept a single point (shape (d,) or a scalar when
    d = 1) or a batch of shape (n, d); batch input gives batch output.
    """

    def __init__(self, weights, means, covs):
        w = np.asarray(weights, dtype=float).ravel()
        mu = np.asarray(means, dtype=float)
        if mu.ndim == 1:
            mu = mu[:, None]
        S = np.asarray(covs, dtype=float)
        if S.ndim == 1:
            S = S[:, None, None]
        if not (len(w) == mu.shape[0] == S.shape[0]):
            raise InvalidInputError("weights, means and covariances disagree in length")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-10:
            raise InvalidInputError("mixture weights must be positive and sum to 1")
        d = mu.shape[1]
        if S.shape[1:] != (d, d):
            raise InvalidInputError(f"covariances must be {d}x{d}")
        if not np.allclose(S, np.swapaxes(S, 1, 2)):
            raise InvalidInputError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("covariances must be positive definite") from exc
        self.weights = w
        self.means = mu
        self.covs = S
        self.dim = d
        self._chol = chol
        self._prec = np.linalg.inv(S)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        self._log_norm = np.log(w) - 0.5 * logdet - 0.5 * d * math.log(2.0 * math.pi)

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def __repr__(self):
        return f"{type(self).__name__}(d={self.dim}, components={self.n_components})"

    def _batch(self, x):
        a = np.asarray(x, dtype=float)
        single = a.ndim == 0 or (a.ndim == 1 and (self.dim > 1 or a.size == 1) and a.size == self.dim)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        elif a.ndim == 1:
            a = a.reshape(1, -1) if single else a[:, None]
        if a.shape[1] != self.dim:
            raise InvalidInputError(f"expected points of dimension {self.dim}, got {a.shape}")
        return a, single

    def _components(self, X):
        # diff: (n, K, d); Pdiff: precision applied to diff
        diff = X[:, None, :] - self.means[None, :, :]
        Pdiff = np.einsum("kij,nkj->nki", self._prec, diff)
        quad = np.einsum("nki,nki->nk", diff, Pdiff)
        logc = self._log_norm[None, :] - 0.5 * quad
        return logc, Pdiff

    def log_density(self, x):
        X, single = self._batch(x)
        logc, _ = self._components(X)
        out = logsumexp(logc, axis=1)
        return float(out[0]) if single else out

    def density(self, x):
        return np.exp(self.log_density(x))

    def potential(self, x):
        """V(x) = -log pi(x)."""
        X, single = self._batch(x)
        logc, _ = self._components(X)
        out = -logsumexp(logc, axis=1)
        return float(out[0]) if single else out

    def responsibilities(self, x):
        X, _ = self._batch(x)
        logc, _ = self._components(X)
        return np.exp(logc - logsumexp(logc, axis=1, keepdims=True))

    def grad_potential(self, x):
        """grad V(x) = sum_k r_k(x) Sigma_k^{-1} (x - mu_k)."""
        X, single = self._batch(x)
        logc, Pdiff = self._components(X)
        r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
        g = np.einsum("nk,nki->ni", r, Pdiff)
        return g[0] if single else g

    def hess_potential(self, x):
        X, single = self._batch(x)
        logc, Pdiff = self._components(X)
        r = np.exp(logc - logsumexp(logc, axis=1, keepdims=True))
        g = np.einsum("nk,nki->ni", r, Pdiff)
        H = (
            np.einsum("nk,kij->nij", r, self._prec)
            - np.einsum("nk,nki,nkj->nij", r, Pdiff, Pdiff)
            + g[:, :, None] * g[:, None, :]
        )
        return H[0] if single else H

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws as an (n, d) array: categorical label, then a Gaussian."""
        if n < 1:
            raise InvalidInputError("sample size must be at least 1")
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        return self.means[labels] + np.einsum("nij,nj->ni", self._chol[labels], z)

    def component_std_max(self) -> float:
        return float(np.sqrt(max(np.linalg.eigvalsh(S).max() for S in self.covs)))

    def default_domain(self, width: float = 10.0) -> tuple[float, float]:
        """Truncation interval [min mu - width*s, max mu + width*s] for d = 1."""
        if self.dim != 1:
            raise InvalidInputError("a 1-D domain only makes sense for d = 1")
        s = self.component_std_max()
        return float(self.means.min() - width * s), float(self.means.max() + width * s)

    def to_config(self) -> dict:
        return {
            "kind": "gaussian_mixture",
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "covs": self.covs.tolist(),
        }


class Gaussian(GaussianMixture):
    """Single Gaussian N(mean, cov); grad V(x) = cov^{-1} (x - mean)."""

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 0:
            cov = cov * np.eye(mean.size)
        super().__init__([1.0], mean[None, :], cov[None, :, :])

    @property
    def mean(self):
        return self.means[0]

    @property
    def cov(self):
        return self.covs[0]


def standard_normal(d: int = 1) -> Gaussian:
    return Gaussian(np.zeros(d), np.eye(d))


def benchmark_targets() -> tuple[GaussianMixture, GaussianMixture]:
    """The 1-D four-mode and the 2-D six-mode benchmark mixtures."""
    one_d = GaussianMixture(
        [0.25] * 4,
        [[2.0], [-2.0], [6.0], [-6.0]],
        [[[1.0]]] * 4,
    )
    small = 0.2 * np.eye(2)
    wide = np.diag([10.0, 0.5])
    two_d = GaussianMixture(
        [1.0 / 6.0] * 6,
        [[-5.0, -1.0], [-5.0, 1.0], [5.0, -1.0], [5.0, 1.0], [0.0, 1.0], [0.0, -1.0]],
        [small, small, small, small, wide, wide],
    )
    return one_d, two_d


PRESETS = {
    "mixture_1d": lambda: benchmark_targets()[0],
    "mixture_2d": lambda: benchmark_targets()[1],
    "standard_normal": lambda: standard_normal(1),
    "standard_normal_2d": lambda: standard_normal(2),
}


def from_config(cfg) -> GaussianMixture:
    """Build a target from a preset name or a JSON description."""
    if isinstance(cfg, str):
        if cfg not in PRESETS:
            raise InvalidInputError(f"unknown target preset {cfg!r}; known: {sorted(PRESETS)}")
        return PRESETS[cfg]()
    if not isinstance(cfg, dict):
        raise InvalidInputError(f"bad target config {cfg!r}")
    kind = cfg.get("kind", "gaussian_mixture")
    if kind == "preset":
        return from_config(cfg["name"])
    if kind == "gaussian":
        return Gaussian(cfg["mean"], cfg["cov"])
    if kind == "gaussian_mixture":
        return GaussianMixture(cfg["weights"], cfg["means"], cfg["covs"])
    raise InvalidInputError(f"unknown target kind {kind!r}")
