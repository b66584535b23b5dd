"""Dense linear algebra for small p: Gram accumulation and SPD solves."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateWeightsError, InvalidInputError, SingularMatrixError

# Cholesky pivot below PIVOT_RTOL * max(diag(A)) is treated as singular.
PIVOT_RTOL = 1e-12


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] < 1:
        raise InvalidInputError(f"expected a non-empty 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("matrix contains NaN or Inf")
    return X


def _symmetrize(G: np.ndarray) -> np.ndarray:
    # a + b == b + a in IEEE arithmetic, so the result is exactly symmetric
    return (G + G.T) * 0.5


def gram(X) -> np.ndarray:
    """Return X^T X as an exactly symmetric (p, p) array."""
    X = _as_matrix(X)
    return _symmetrize(X.T @ X)


def weighted_gram_and_moment(X, y, w) -> tuple[np.ndarray, np.ndarray]:
    """Return (X^T W X, X^T W y) with W = diag(w)."""
    X = _as_matrix(X)
    y = np.asarray(y, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if y.shape[0] != X.shape[0] or w.shape[0] != X.shape[0]:
        raise InvalidInputError(
            f"length mismatch: X has {X.shape[0]} rows, y {y.shape[0]}, w {w.shape[0]}"
        )
    if not (np.all(np.isfinite(w)) and np.all(np.isfinite(y))):
        raise InvalidInputError("weights and response must be finite")
    if np.any(w < 0):
        raise InvalidInputError("weights must be nonnegative")
    if not np.any(w > 0):
        raise DegenerateWeightsError("all weights are zero")
    return _weighted_normal_equations(X, y, w)


def _weighted_normal_equations(X: np.ndarray, y: np.ndarray, w: np.ndarray):
    # unchecked inner-loop variant for the IRLS solver
    Xw = X * w[:, None]
    return _symmetrize(X.T @ Xw), Xw.T @ y


def _find_failing_pivot(A: np.ndarray, thresh: float) -> tuple[int, float]:
    """Plain column Cholesky; return the index and value of the first bad pivot."""
    p = A.shape[0]
    L = np.zeros_like(A)
    for j in range(p):
        d = A[j, j] - L[j, :j] @ L[j, :j]
        if not d >= thresh:
            return j, float(d)
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (A[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return -1, float("nan")


def cholesky(A) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises SingularMatrixError (with ``pivot_index``) when a pivot falls below
    ``PIVOT_RTOL`` times the largest diagonal entry.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix contains NaN or Inf")
    dmax = float(np.max(np.diag(A))) if A.size else 0.0
    if not dmax > 0:
        raise SingularMatrixError("matrix has no positive diagonal entry", pivot_index=0)
    thresh = PIVOT_RTOL * dmax
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        j, d = _find_failing_pivot(A, thresh)
        raise SingularMatrixError(
            f"matrix is not positive definite (pivot {j} = {d:.3e})", pivot_index=max(j, 0)
        ) from None
    pivots = np.diag(L) ** 2
    bad = np.flatnonzero(pivots < thresh)
    if bad.size:
        j = int(bad[0])
        raise SingularMatrixError(
            f"matrix is numerically singular (pivot {j} = {pivots[j]:.3e}, "
            f"threshold {thresh:.3e})",
            pivot_index=j,
        )
    return L


def solve_spd(A, b) -> np.ndarray:
    """Solve A x = b for symmetric positive-definite A.

    The Cholesky factorization validates definiteness; ``b`` may be a vector
    or a (p, m) matrix of right-hand sides.
    """
    L = cholesky(A)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != L.shape[0]:
        raise InvalidInputError(f"rhs has {b.shape[0]} rows, matrix is {L.shape[0]}x{L.shape[0]}")
    z = np.linalg.solve(L, b)
    return np.linalg.solve(L.T, z)


def inv_spd(A) -> np.ndarray:
    p = np.asarray(A).shape[0]
    return _symmetrize(solve_spd(A, np.eye(p)))
