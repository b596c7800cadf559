"""Symmetric eigensolvers and PSD matrix square roots."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError, NonConvergenceError

PSD_TOL = 1e-10


def check_symmetric(A, rtol: float = 1e-12) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    scale = 1.0 + np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > rtol * scale:
        raise InvalidInputError("matrix is not symmetric")
    return 0.5 * (A + A.T)


def jacobi_eigh(A, tol: float | None = None, max_sweeps: int = 100):
    """Cyclic Jacobi eigendecomposition of a symmetric matrix.

    Returns ascending eigenvalues and the matching orthonormal eigenvectors
    (as columns).  Quadratically convergent once off-diagonal mass is small;
    intended for matrices up to a few hundred rows.
    """
    A = check_symmetric(A).copy()
    n = A.shape[0]
    V = np.eye(n)
    norm = np.linalg.norm(A)
    if tol is None:
        tol = 4.0 * n * np.finfo(float).eps
    if n == 1 or norm == 0.0:
        return np.diag(A).copy(), V
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * norm:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) <= 1e-300 * norm:
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                elif theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                aq = A[:, q].copy()
                A[:, p] = c * ap - s * aq
                A[:, q] = s * ap + c * aq
                ap = A[p, :].copy()
                aq = A[q, :].copy()
                A[p, :] = c * ap - s * aq
                A[q, :] = s * ap + c * aq
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
    else:
        raise NonConvergenceError("Jacobi sweeps did not converge", {"sweeps": max_sweeps})
    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def eigh(A, method: str = "lapack"):
    """Symmetric eigendecomposition; ``method`` is "lapack" or "jacobi"."""
    if method == "jacobi":
        return jacobi_eigh(A)
    if method != "lapack":
        raise InvalidInputError(f"unknown eigensolver {method!r}")
    return np.linalg.eigh(check_symmetric(A))


def gram_sqrt(G, method: str = "lapack", psd_tol: float = PSD_TOL) -> np.ndarray:
    """Symmetric PSD square root S with S @ S = G.

    Eigenvalues down to ``-psd_tol * (1 + ||G||)`` are clamped to zero; anything
    more negative means G is not PSD and raises.
    """
    w, V = eigh(G, method=method)
    floor = -psd_tol * (1.0 + np.abs(w).max(initial=0.0))
    if w.size and w[0] < floor:
        raise InvalidInputError(f"matrix is not positive semi-definite (min eigenvalue {w[0]:.3e})")
    root = np.sqrt(np.clip(w, 0.0, None))
    S = (V * root) @ V.T
    return 0.5 * (S + S.T)


def generalized_eigh(A, M, method: str = "lapack"):
    """Solve A v = lambda M v for symmetric A and SPD M by Cholesky whitening."""
    A = check_symmetric(A, rtol=1e-10)
    M = check_symmetric(M, rtol=1e-10)
    L = np.linalg.cholesky(M)
    Linv_A = np.linalg.solve(L, A)
    C = np.linalg.solve(L, Linv_A.T).T
    C = 0.5 * (C + C.T)
    w, U = eigh(C, method=method)
    V = np.linalg.solve(L.T, U)
    return w, V
