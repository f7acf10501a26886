"""Dense kernels for small upper-triangular Cholesky factors.

Every factor here is upper triangular with ``R.T @ R = A`` and a strictly
positive diagonal. Zero-order factors (shape ``(0, 0)``) are accepted
everywhere so that callers can grow a factor column by column from empty.
"""

import numpy as np
import scipy.linalg

from .errors import DowndateFailure, NotPositiveDefinite, RankDeficient, SingularFactor

__all__ = [
    "cholesky",
    "qr_factor_tall",
    "chol_update",
    "chol_downdate",
    "solve_triangular",
    "DOWNDATE_RTOL",
]

# A downdated pivot r^2 = R[k,k]^2 - v[k]^2 below this fraction of R[k,k]^2
# has lost too many digits to cancellation to be trusted.
DOWNDATE_RTOL = 1e-8


def _as_factor(R):
    R = np.array(R, dtype=float, copy=True)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"factor must be square, got shape {R.shape}")
    return R


def cholesky(A):
    """Upper Cholesky factor of a symmetric positive definite matrix.

    Raises NotPositiveDefinite when a pivot falls below
    ``1e-14 * trace(A) / m``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    m = A.shape[0]
    if m == 0:
        return np.zeros((0, 0))
    scale = np.linalg.norm(A)
    if np.linalg.norm(A - A.T) > 1e-10 * max(scale, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")

    eps_pd = 1e-14 * np.trace(A) / m
    R = np.zeros_like(A)
    for j in range(m):
        col = R[:j, j]
        pivot = A[j, j] - col @ col
        if not pivot > eps_pd:
            raise NotPositiveDefinite(f"pivot {pivot:.3e} at index {j} (threshold {eps_pd:.3e})")
        R[j, j] = np.sqrt(pivot)
        R[j, j + 1 :] = (A[j, j + 1 :] - col @ R[:j, j + 1 :]) / R[j, j]
    return R


def qr_factor_tall(M):
    """Triangular factor of a tall matrix via Householder QR.

    Returns R with ``R.T @ R == M.T @ M`` and a positive diagonal.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] < M.shape[1]:
        raise ValueError(f"expected a tall matrix, got shape {M.shape}")
    m = M.shape[1]
    if m == 0:
        return np.zeros((0, 0))
    R = np.linalg.qr(M, mode="r")[:m, :m]
    diag = np.diag(R)
    if np.any(np.abs(diag) <= 1e-14 * np.linalg.norm(M)):
        raise RankDeficient("column norm collapsed during QR")
    # Flip rows so the diagonal is positive; Q absorbs the signs.
    R *= np.sign(diag)[:, None]
    return np.triu(R)


def chol_update(R, v):
    """Factor of ``R.T @ R + outer(v, v)`` by a sweep of Givens rotations."""
    R = _as_factor(R)
    v = np.array(v, dtype=float, copy=True)
    m = R.shape[0]
    if v.shape != (m,):
        raise ValueError(f"vector of length {m} expected, got shape {v.shape}")
    for k in range(m):
        if v[k] == 0.0:
            continue
        r = np.hypot(R[k, k], v[k])
        c = r / R[k, k]
        s = v[k] / R[k, k]
        R[k, k] = r
        R[k, k + 1 :] = (R[k, k + 1 :] + s * v[k + 1 :]) / c
        v[k + 1 :] = c * v[k + 1 :] - s * R[k, k + 1 :]
    return R


def chol_downdate(R, v):
    """Factor of ``R.T @ R - outer(v, v)`` by hyperbolic rotations.

    Raises DowndateFailure as soon as a pivot would become non-positive
    (or lose nearly all of its digits); the input is never modified.
    """
    R = _as_factor(R)
    v = np.array(v, dtype=float, copy=True)
    m = R.shape[0]
    if v.shape != (m,):
        raise ValueError(f"vector of length {m} expected, got shape {v.shape}")
    for k in range(m):
        if v[k] == 0.0:
            continue
        rkk = R[k, k]
        r2 = (rkk - v[k]) * (rkk + v[k])
        if not r2 > DOWNDATE_RTOL * rkk * rkk:
            raise DowndateFailure(f"downdate infeasible at pivot {k}")
        r = np.sqrt(r2)
        c = r / rkk
        s = v[k] / rkk
        R[k, k] = r
        R[k, k + 1 :] = (R[k, k + 1 :] - s * v[k + 1 :]) / c
        v[k + 1 :] = c * v[k + 1 :] - s * R[k, k + 1 :]
    return R


def solve_triangular(R, b, transpose=False):
    """Solve ``R x = b`` (or ``R.T x = b``) for an upper-triangular factor."""
    R = np.asarray(R, dtype=float)
    b = np.asarray(b, dtype=float)
    if R.shape[0] == 0:
        return np.zeros_like(b)
    if np.any(np.diag(R) <= 0.0):
        raise SingularFactor("factor has a non-positive diagonal entry")
    return scipy.linalg.solve_triangular(
        R, b, trans="T" if transpose else "N", lower=False, check_finite=False
    )
