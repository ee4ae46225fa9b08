"""Incomplete LDL^T preconditioner and preconditioned conjugate gradients."""

from __future__ import annotations

import logging

import numpy as np
from scipy.linalg import solve_triangular

log = logging.getLogger(__name__)


def minimum_degree_order(pattern: np.ndarray) -> np.ndarray:
    """Greedy minimum-degree elimination order of a symmetric pattern.

    Ties go to the lowest index.  Leaves of a tree are always eliminated
    before their parents, so trees factor without fill.
    """
    n = pattern.shape[0]
    adj = [set(np.nonzero(pattern[i])[0].tolist()) - {i} for i in range(n)]
    alive = set(range(n))
    order = []
    while alive:
        i = min(alive, key=lambda k: (len(adj[k]), k))
        nbrs = adj[i]
        for a in nbrs:
            adj[a] |= nbrs
            adj[a].discard(a)
            adj[a].discard(i)
        alive.remove(i)
        order.append(i)
    return np.array(order, dtype=int)


class IncompleteLDL:
    """Limited-fill LDL^T factorization ``P A P^T ~ L D L^T``.

    ``fill`` is the number of entries per column kept outside the original
    sparsity pattern (largest magnitude first); ``None`` keeps everything,
    giving an exact factorization.  A non-positive pivot falls back to a
    Jacobi (diagonal) preconditioner with a logged warning.
    """

    def __init__(self, A, fill: int | None = None):
        A = np.asarray(A.toarray() if hasattr(A, "toarray") else A, dtype=float)
        n = A.shape[0]
        self.n = n
        self.fill = fill
        self.jacobi = False
        pattern = A != 0
        self.perm = minimum_degree_order(pattern)
        W = A[np.ix_(self.perm, self.perm)].copy()
        pat = pattern[np.ix_(self.perm, self.perm)]
        L = np.eye(n)
        D = np.zeros(n)
        self.dropped = 0
        for j in range(n):
            dj = W[j, j]
            if not dj > 1e-14 * max(1.0, abs(A).max()):
                log.warning("incomplete LDL breakdown at pivot %d; using Jacobi", j)
                self._use_jacobi(A)
                return
            D[j] = dj
            col = W[j + 1:, j] / dj
            if fill is not None and col.size:
                outside = ~pat[j + 1:, j] & (col != 0)
                idx = np.nonzero(outside)[0]
                if idx.size > fill:
                    keep = idx[np.argsort(-np.abs(col[idx]), kind="stable")[:fill]]
                    drop = np.setdiff1d(idx, keep)
                    col[drop] = 0.0
                    self.dropped += drop.size
            L[j + 1:, j] = col
            W[j + 1:, j + 1:] -= dj * np.outer(col, col)
        self.L, self.D = L, D

    def _use_jacobi(self, A):
        self.jacobi = True
        self.diag = np.diag(A).copy()
        self.diag[self.diag <= 0] = 1.0

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Return ``P^{-1} r`` (``r`` may hold several columns)."""
        if self.jacobi:
            return (r.T / self.diag).T
        rp = r[self.perm]
        y = solve_triangular(self.L, rp, lower=True, unit_diagonal=True, check_finite=False)
        y = (y.T / self.D).T
        z = solve_triangular(self.L.T, y, lower=False, unit_diagonal=True, check_finite=False)
        out = np.empty_like(z)
        out[self.perm] = z
        return out


def build_preconditioner(A, fill: int | None = None) -> IncompleteLDL:
    return IncompleteLDL(A, fill)


class PcgError(RuntimeError):
    """PCG hit its iteration cap; carries the best iterate seen."""

    def __init__(self, msg, x, residual):
        super().__init__(msg)
        self.x = x
        self.residual = residual


def pcg_solve(A, b, M=None, tol: float = 1e-10, maxiter: int | None = None):
    """Solve SPD ``A x = b``; returns ``(x, iterations)``.

    Stops once ``||A x - b|| <= tol * ||b||``.  ``M`` is anything with an
    ``apply`` method (or None for no preconditioning).
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    maxiter = n if maxiter is None else maxiter
    x = np.zeros(n)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    prec = (lambda r: r) if M is None else M.apply
    r = b.copy()
    z = prec(r)
    p = z.copy()
    rz = r @ z
    best_x, best_res = x.copy(), 1.0
    for it in range(1, maxiter + 1):
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= tol:
            return x, it
        z = prec(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise PcgError(f"pcg did not reach tol {tol:g} in {maxiter} iterations "
                   f"(residual {best_res:.3e})", best_x, best_res)
