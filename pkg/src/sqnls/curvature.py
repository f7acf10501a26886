"""Limited-memory least-squares inverse Hessian.

The inverse Hessian estimate is the minimiser of
``||H Y - S||_F^2 + lam * ||H - gamma I||_F^2``, i.e.

    H = (lam I + Y Y^T)^{-1} (lam gamma I + Y S^T),

which is never formed. Only Y, S (d x m) and the upper Cholesky factor R of
the m x m matrix ``lam I + Y^T Y`` are stored, and R is maintained under
column replacement without refactorising.
"""

import logging

import numpy as np

from .errors import DimensionMismatch, DimensionTooLarge, DowndateFailure
from .numerics import DOWNDATE_RTOL, chol_downdate, chol_update, qr_factor_tall, solve_triangular

__all__ = ["CurvatureMemory", "descent_correct", "GRAD_TOL", "PAIR_TOL"]

log = logging.getLogger(__name__)

GRAD_TOL = 1e-12
PAIR_TOL = 1e-12
GAMMA_MIN, GAMMA_MAX = 1e-8, 1e8


def descent_correct(p, g):
    """Push ``p`` onto the descent side of ``g``.

    Uses ``p - beta * g`` with ``beta = 2 max(0, p.g / g.g)``, which mirrors an
    ascent direction through the hyperplane orthogonal to ``g``. Falls back
    to ``-g`` if the result is still not strictly downhill (``p.g == 0`` or
    roundoff).
    """
    p = np.asarray(p, dtype=float)
    g = np.asarray(g, dtype=float)
    pg = p @ g
    beta = 2.0 * max(0.0, pg / (g @ g))
    out = p - beta * g if beta > 0.0 else p
    if not out @ g < 0.0:
        return -g
    return out


class CurvatureMemory:
    """Circular buffer of curvature pairs with a sliding-window Cholesky factor.

    Columns live in fixed slots ``0..m-1``; while the buffer fills they are
    appended, afterwards the slot at ``write_index`` (always the oldest pair)
    is overwritten. ``R`` is the factor of ``lam I + Y^T Y`` with the columns
    of ``Y`` in slot order.

    Parameters
    ----------
    dim : int
        Dimension d of the iterates.
    capacity : int
        Memory length m.
    lam : float
        Weight of the prior term in the least-squares fit.
    gamma : float
        Initial scale of the prior ``gamma * I``; replaced by ``s.y / y.y``
        from each admitted pair with positive curvature.
    refactor_every : int
        Rebuild R from scratch (via QR) after this many pushes.
    """

    def __init__(self, dim, capacity, lam, gamma=1.0, refactor_every=64):
        if dim < 1 or capacity < 1:
            raise ValueError("dim and capacity must be positive")
        if not lam > 0:
            raise ValueError("lam must be positive")
        self.dim = int(dim)
        self.capacity = int(capacity)
        self.lam = float(lam)
        self.gamma = float(np.clip(gamma, GAMMA_MIN, GAMMA_MAX))
        self.refactor_every = int(refactor_every)
        self._Y = np.zeros((self.dim, self.capacity))
        self._S = np.zeros((self.dim, self.capacity))
        self.R = np.zeros((0, 0))
        self.count = 0
        self.write_index = 0
        self.pushes_since_refactor = 0
        # diagnostics
        self.n_refactor = 0
        self.n_downdate_failures = 0

    @property
    def Y(self):
        return self._Y[:, : self.count]

    @property
    def S(self):
        return self._S[:, : self.count]

    def push_pair(self, s, y):
        """Admit the pair (s, y); returns False if it was skipped as degenerate."""
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        if s.shape != (self.dim,) or y.shape != (self.dim,):
            raise DimensionMismatch(
                f"pair shapes {s.shape}, {y.shape} do not match dim {self.dim}"
            )
        if np.linalg.norm(s) <= PAIR_TOL or np.linalg.norm(y) <= PAIR_TOL:
            return False

        j = self.write_index
        appending = self.count < self.capacity
        self._Y[:, j] = y
        self._S[:, j] = s
        if appending:
            self.count += 1
        self.write_index = (j + 1) % self.capacity

        self.pushes_since_refactor += 1
        if self.pushes_since_refactor >= self.refactor_every:
            self.refactor()
        else:
            try:
                self.R = self._replace_column(j, y, appending)
            except DowndateFailure:
                self.n_downdate_failures += 1
                log.debug("downdate failed at slot %d; refactorising", j)
                self.refactor()

        sy = s @ y
        if sy > 0:
            self.gamma = float(np.clip(sy / (y @ y), GAMMA_MIN, GAMMA_MAX))
        return True

    def _replace_column(self, j, y, appending):
        # Y has already been written; Y1 are the columns left of slot j,
        # Y2 those right of it.
        lam = self.lam
        R_old = self.R
        Y1 = self._Y[:, :j]
        R1 = R_old[:j, :j]
        r4 = solve_triangular(R1, Y1.T @ y, transpose=True)
        yy = y @ y
        r5sq = lam + yy - r4 @ r4
        if not r5sq > DOWNDATE_RTOL * (lam + yy):
            raise DowndateFailure("border pivot lost positivity")
        r5 = np.sqrt(r5sq)

        n = self.count
        R = np.zeros((n, n))
        R[:j, :j] = R1
        R[:j, j] = r4
        R[j, j] = r5
        if not appending and j + 1 < n:
            Y2 = self._Y[:, j + 1 : n]
            R2 = R_old[:j, j + 1 :]
            r3 = R_old[j, j + 1 :]
            R4 = R_old[j + 1 :, j + 1 :]
            r6 = (y @ Y2 - r4 @ R2) / r5
            # Update before downdating so the intermediate stays positive definite.
            R6 = chol_downdate(chol_update(R4, r3), r6)
            R[:j, j + 1 :] = R2
            R[j, j + 1 :] = r6
            R[j + 1 :, j + 1 :] = R6
        return R

    def refactor(self):
        """Rebuild R from the stored columns via QR of ``[sqrt(lam) I; Y]``."""
        n = self.count
        M = np.vstack([np.sqrt(self.lam) * np.eye(n), self.Y])
        self.R = qr_factor_tall(M)
        self.pushes_since_refactor = 0
        self.n_refactor += 1

    def gram_residual(self):
        """Relative Frobenius error of ``R^T R`` against ``lam I + Y^T Y``."""
        A = self.lam * np.eye(self.count) + self.Y.T @ self.Y
        return np.linalg.norm(self.R.T @ self.R - A) / np.linalg.norm(A)

    def search_direction(self, g, correct=True):
        """Return ``-H g``, optionally passed through :func:`descent_correct`."""
        g = np.asarray(g, dtype=float)
        if g.shape != (self.dim,):
            raise DimensionMismatch(f"gradient shape {g.shape} does not match dim {self.dim}")
        if np.linalg.norm(g) <= GRAD_TOL:
            return np.zeros(self.dim)
        if self.count == 0:
            return -self.gamma * g
        Y, S = self.Y, self.S
        z = self.gamma * g + Y @ (S.T @ g) / self.lam
        w = solve_triangular(self.R, solve_triangular(self.R, Y.T @ z, transpose=True))
        p = -z + Y @ w
        return descent_correct(p, g) if correct else p

    def dense_inverse_hessian(self):
        """Materialise H as a d x d matrix. Test helper, limited to d <= 64."""
        d = self.dim
        if d > 64:
            raise DimensionTooLarge(f"refusing to form a {d}x{d} inverse Hessian")
        Y, S = self.Y, self.S
        lhs = self.lam * np.eye(d) + Y @ Y.T
        rhs = self.lam * self.gamma * np.eye(d) + Y @ S.T
        return np.linalg.solve(lhs, rhs)
