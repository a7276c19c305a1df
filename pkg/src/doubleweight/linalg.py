"""Dense linear algebra kernels shared by the GLM and WLS fitters.

Thin wrappers over numpy with two policies fixed package-wide: a relative
rank tolerance for symmetric factorizations, and a deterministic
drop-trailing-columns treatment of collinear designs (later columns lose,
their coefficients are pinned to zero, and the dropped set is surfaced).
"""

from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import DegenerateFitError, NotPositiveDefiniteError

# A pivot counts as zero when below RANK_RTOL times the largest Gram diagonal.
RANK_RTOL = 1e-10

SYMMETRY_RTOL = 1e-10


def check_matrix(a, name="matrix"):
    """Validate and return a 2-D float64 array with finite entries."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or Inf")
    return a


def check_vector(v, name="vector", nonnegative=False):
    """Validate and return a 1-D float64 array with finite entries."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains NaN or Inf")
    if nonnegative and np.any(v < 0):
        raise ValueError(f"{name} must be nonnegative")
    return v


def _cholesky_with_drops(a, tol):
    """Lower-triangular factor of a symmetric matrix, dropping bad pivots.

    Columns whose pivot falls at or below ``tol`` are skipped (their rows and
    columns of the factor stay zero) and reported.  For a kept index set K,
    L[K][:, K] is a classical Cholesky factor of a[K][:, K].
    """
    k = a.shape[0]
    ell = np.zeros_like(a)
    dropped = []
    for j in range(k):
        pivot = a[j, j] - ell[j, :j] @ ell[j, :j]
        if pivot <= tol:
            dropped.append(j)
            continue
        ljj = np.sqrt(pivot)
        ell[j, j] = ljj
        if j + 1 < k:
            ell[j + 1 :, j] = (a[j + 1 :, j] - ell[j + 1 :, :j] @ ell[j, :j]) / ljj
    return ell, dropped


def solve_spd(a, b):
    """Solve a x = b for symmetric positive-definite a via Cholesky."""
    a = check_matrix(a, "a")
    b = check_vector(b, "b")
    k = a.shape[0]
    if a.shape[1] != k:
        raise ValueError(f"a must be square, got {a.shape}")
    if b.shape[0] != k:
        raise ValueError(f"dimension mismatch: a is {k}x{k}, b has length {b.shape[0]}")
    scale = np.max(np.abs(a)) if k else 0.0
    if k and np.max(np.abs(a - a.T)) > SYMMETRY_RTOL * max(scale, 1.0):
        raise ValueError("a is not symmetric within tolerance")
    tol = RANK_RTOL * max(np.max(np.diag(a)), 0.0) if k else 0.0
    ell, dropped = _cholesky_with_drops(a, tol)
    if dropped:
        raise NotPositiveDefiniteError(
            f"pivot at column(s) {dropped} at or below rank tolerance {tol:.3e}"
        )
    z = solve_triangular(ell, b, lower=True)
    return solve_triangular(ell.T, z, lower=False)


def weighted_gram(x, w, y):
    """Accumulate the weighted normal equations (sum w x x', sum w x y)."""
    x = check_matrix(x, "x")
    w = check_vector(w, "w", nonnegative=True)
    y = check_vector(y, "y")
    n = x.shape[0]
    if w.shape[0] != n or y.shape[0] != n:
        raise ValueError("x, w, y must share the same number of rows")
    xs = x * np.sqrt(w)[:, None]
    xtwx = xs.T @ xs
    xtwx = (xtwx + xtwx.T) / 2.0  # bit-symmetric
    xtwy = x.T @ (w * y)
    return xtwx, xtwy


class LstsqResult(NamedTuple):
    beta: np.ndarray
    dropped_columns: tuple


def solve_least_squares(x, w, y):
    """Weighted least squares with the drop-trailing-collinear-columns policy.

    Minimizes sum w_i (y_i - x_i'beta)^2.  Collinear columns (left-to-right
    pivot scan) get coefficient zero and are reported in ``dropped_columns``.
    """
    x = check_matrix(x, "x")
    w = check_vector(w, "w", nonnegative=True)
    y = check_vector(y, "y")
    if not np.any(w > 0):
        raise DegenerateFitError("no rows with positive weight")
    xtwx, xtwy = weighted_gram(x, w, y)
    return _solve_normal_equations(xtwx, xtwy)


def _solve_normal_equations(xtwx, xtwy):
    """Solve the normal equations under the shared rank-drop policy."""
    k = xtwx.shape[0]
    tol = RANK_RTOL * max(np.max(np.diag(xtwx)), 0.0)
    ell, dropped = _cholesky_with_drops(xtwx, tol)
    kept = [j for j in range(k) if j not in set(dropped)]
    beta = np.zeros(k)
    if kept:
        idx = np.asarray(kept)
        ell_k = ell[np.ix_(idx, idx)]
        z = solve_triangular(ell_k, xtwy[idx], lower=True)
        beta[idx] = solve_triangular(ell_k.T, z, lower=False)
    return LstsqResult(beta=beta, dropped_columns=tuple(dropped))
