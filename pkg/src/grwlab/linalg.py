"""Dense real linear algebra on small and medium matrices.

This is the substrate for every oracle and safeguard in the package: Gram
matrices, extreme eigenvalues, span projections and SPD solves.  Matrices are
plain row-major float64 ``numpy`` arrays (2-D), vectors are 1-D arrays; every
entry must be finite.  All functions are pure and never mutate their inputs,
so they are safe to call concurrently.

Everything runs in 64-bit floats.  No extended precision is used anywhere:
long classification runs are expected to saturate double precision and that
saturation is treated as documented behavior, not an error.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    InvalidArgumentError,
    NoConvergenceError,
    NotPositiveDefiniteError,
    RankDeficientError,
)

# lambda_min below RANK_TOL * lambda_max counts as rank-deficient.  The
# interpolation and max-margin results assume linearly independent inputs, so
# violations must be detected instead of silently solving an ill-posed system.
RANK_TOL = 1e-12

# Full Jacobi diagonalization below this size, iterative methods above.
_JACOBI_MAX_N = 64
_ITER_CAP = 100_000


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite float64 2-D array, validating shape and entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty 2-D array, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return m


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce to a finite float64 1-D array."""
    v = np.asarray(a, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty 1-D array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return v


def gram(f) -> np.ndarray:
    """Gram matrix of the columns of ``f``: result[i, j] = <col_i, col_j>.

    The result is symmetrized exactly, so it is symmetric PSD up to round-off.
    """
    f = as_matrix(f, "feature matrix")
    g = f.T @ f
    return 0.5 * (g + g.T)


def _check_symmetric(s: np.ndarray, tol: float = 1e-10) -> None:
    if s.shape[0] != s.shape[1]:
        raise InvalidArgumentError(f"matrix must be square, got shape {s.shape}")
    scale = max(1.0, float(np.abs(s).max()))
    if float(np.abs(s - s.T).max()) > tol * scale:
        raise InvalidArgumentError("matrix is not symmetric within tolerance")


def _jacobi_eigenvalues(s: np.ndarray, tol: float) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by cyclic Jacobi sweeps."""
    a = s.copy()
    n = a.shape[0]
    scale = max(float(np.abs(a).max()), 1e-300)
    target = max(tol, 1e-15 * scale) * 1e-2
    for _ in range(60):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= target:
            return np.sort(np.diag(a))
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.hypot(1.0, tau)) if tau != 0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                sn = t * c
                rp, rq = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * rp - sn * rq
                a[q, :] = sn * rp + c * rq
                cp, cq = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * cp - sn * cq
                a[:, q] = sn * cp + c * cq
                a[p, q] = 0.0
                a[q, p] = 0.0
    raise NoConvergenceError("Jacobi diagonalization did not converge in 60 sweeps")


def _power_max_eigenvalue(b: np.ndarray, tol: float) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = b.shape[0]
    rng = np.random.default_rng(0x5EED)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam = float(v @ (b @ v))
    for _ in range(_ITER_CAP):
        w = b @ v
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        new = float(v @ (b @ v))
        if abs(new - lam) <= tol * max(1.0, abs(new)):
            return new
        lam = new
    raise NoConvergenceError("power iteration hit the iteration cap")


def extreme_eigenvalues(s, tol: float = 1e-10) -> tuple[float, float]:
    """(lambda_max, lambda_min) of a symmetric matrix.

    Full Jacobi diagonalization for n <= 64; above that, power iteration on a
    Gershgorin-shifted copy (which makes both extremes dominant) with a cap of
    10^5 iterations.
    """
    s = as_matrix(s, "symmetric matrix")
    _check_symmetric(s)
    n = s.shape[0]
    if n == 1:
        v = float(s[0, 0])
        return v, v
    if n <= _JACOBI_MAX_N:
        eig = _jacobi_eigenvalues(s, tol)
        return float(eig[-1]), float(eig[0])
    # Gershgorin bound >= |lambda| for every eigenvalue, so both shifted
    # operators below are PSD with the wanted extreme as dominant eigenvalue.
    shift = float(np.abs(s).sum(axis=1).max())
    lam_max = _power_max_eigenvalue(s + shift * np.eye(n), tol) - shift
    lam_min = shift - _power_max_eigenvalue(shift * np.eye(n) - s, tol)
    return lam_max, lam_min


def _cholesky_lower(a: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor; raises on any non-positive pivot."""
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if not np.isfinite(d) or d <= 0.0:
            raise NotPositiveDefiniteError(f"non-positive pivot at column {j}: {d!r}")
        low[j, j] = np.sqrt(d)
        if j + 1 < n:
            low[j + 1 :, j] = (a[j + 1 :, j] - low[j + 1 :, :j] @ low[j, :j]) / low[j, j]
    return low


def solve_spd(a, b) -> np.ndarray:
    """Solve A x = b for symmetric positive definite A via Cholesky."""
    a = as_matrix(a, "SPD matrix")
    if a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"SPD matrix must be square, got shape {a.shape}")
    b = as_vector(b, "right-hand side")
    if b.shape[0] != a.shape[0]:
        raise InvalidArgumentError("right-hand side length does not match matrix size")
    low = _cholesky_lower(a)
    y = solve_triangular(low, b, lower=True)
    return solve_triangular(low.T, y, lower=False)


def _checked_gram(x: np.ndarray) -> np.ndarray:
    g = gram(x)
    lam_max, lam_min = extreme_eigenvalues(g, 1e-12)
    if lam_max <= 0.0 or lam_min < RANK_TOL * lam_max:
        raise RankDeficientError(
            f"columns are not linearly independent (lambda_min={lam_min:.3e}, lambda_max={lam_max:.3e})"
        )
    return g


def min_norm_span_solve(x, r) -> np.ndarray:
    """Unique v in span{columns of x} with x^T v = r, i.e. x (x^T x)^{-1} r."""
    x = as_matrix(x, "input matrix")
    r = as_vector(r, "targets")
    if r.shape[0] != x.shape[1]:
        raise InvalidArgumentError("target length does not match the number of columns")
    g = _checked_gram(x)
    return x @ solve_spd(g, r)


def span_residual(v, x) -> float:
    """L2 norm of v minus its orthogonal projection onto span{columns of x}."""
    v = as_vector(v, "vector")
    x = as_matrix(x, "input matrix")
    if v.shape[0] != x.shape[0]:
        raise InvalidArgumentError("vector length does not match the column dimension")
    g = _checked_gram(x)
    coef = solve_spd(g, x.T @ v)
    return float(np.linalg.norm(v - x @ coef))
