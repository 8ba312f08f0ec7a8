"""Minimal sparse linear algebra: CSR storage, matvecs, Gauss-Seidel, BiCGStab.

scipy.sparse provides the CSR storage and matvec kernels; the solvers are
implemented here because they must expose per-sweep/per-iteration relative
residual histories and explicit breakdown reporting.
"""

from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from numba import njit


class SingularDiagonalError(RuntimeError):
    pass


class BreakdownError(RuntimeError):
    """BiCGStab breakdown; carries the iterate and history so far."""

    def __init__(self, message, report):
        super().__init__(message)
        self.report = report


class SolveReport(NamedTuple):
    x: np.ndarray
    iterations: int
    history: list          # relative residual per recorded iterate, history[0] = initial
    converged: bool


class CsrMatrix:
    """Compressed sparse row matrix over float64."""

    def __init__(self, scipy_csr):
        m = scipy_csr.tocsr()
        m.sum_duplicates()
        m.sort_indices()
        self._sp = m
        self.nrows, self.ncols = m.shape
        self.row_offsets = m.indptr
        self.col_indices = m.indices
        self.values = m.data

    @classmethod
    def from_coo(cls, rows, cols, vals, shape):
        return cls(sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsr())

    @classmethod
    def from_dense(cls, a):
        return cls(sp.csr_matrix(np.asarray(a, dtype=np.float64)))

    @property
    def nnz(self):
        return self._sp.nnz

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    def diagonal(self):
        return self._sp.diagonal()

    def to_scipy(self):
        return self._sp

    def to_dense(self):
        return self._sp.toarray()

    def transpose(self):
        return CsrMatrix(self._sp.T.tocsr())


def spmv(A, x):
    """y = A x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.ncols,):
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has shape {x.shape}")
    return A._sp @ x


def spmv_transpose(A, x):
    """y = A^T x."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.nrows,):
        raise ValueError(f"dimension mismatch: A is {A.shape}, x has shape {x.shape}")
    return A._sp.T @ x


@njit(cache=True)
def _gs_sweep(indptr, indices, data, diag, b, x):
    n = b.shape[0]
    for i in range(n):
        s = b[i]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j != i:
                s -= data[p] * x[j]
        x[i] = s / diag[i]


def gauss_seidel(A, b, x0=None, tol=1e-6, max_iter=20000):
    """Forward Gauss-Seidel sweeps until the relative residual drops below tol.

    history[k] is ||b - A x_k||_2 / ||b||_2 with x_0 the initial guess;
    iterations counts completed sweeps.
    """
    if A.nrows != A.ncols:
        raise ValueError("gauss_seidel requires a square matrix")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.nrows,):
        raise ValueError("right-hand side length mismatch")
    diag = A.diagonal()
    if np.any(diag == 0.0):
        raise SingularDiagonalError(
            f"zero diagonal entries at rows {np.flatnonzero(diag == 0.0)[:8].tolist()}")
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return SolveReport(np.zeros_like(b), 0, [0.0], True)
    history = [float(np.linalg.norm(b - spmv(A, x)) / nb)]
    if history[0] <= tol:
        return SolveReport(x, 0, history, True)
    for k in range(1, max_iter + 1):
        _gs_sweep(A.row_offsets, A.col_indices, A.values, diag, b, x)
        rr = float(np.linalg.norm(b - spmv(A, x)) / nb)
        history.append(rr)
        if rr <= tol:
            return SolveReport(x, k, history, True)
        if not np.isfinite(rr):
            return SolveReport(x, k, history, False)
    return SolveReport(x, max_iter, history, False)


def bicgstab(A, b, x0=None, tol=1e-12, max_iter=20000,
             stall_window=100, stall_factor=0.99):
    """Jacobi-preconditioned BiCGStab recording the true relative residual.

    Diagonal entries smaller than 1e-14 times the largest are left
    unpreconditioned.  Raises BreakdownError (with the report so far) if
    the recurrence degenerates before convergence.  If the best residual
    fails to improve by stall_factor over stall_window consecutive
    iterations the solve stops and returns the best iterate seen with
    converged=False; near the float64 residual floor BiCGStab otherwise
    wanders indefinitely.
    """
    if A.nrows != A.ncols:
        raise ValueError("bicgstab requires a square matrix")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.nrows,):
        raise ValueError("right-hand side length mismatch")
    d = A.diagonal()
    dmax = np.max(np.abs(d)) if A.nrows else 0.0
    safe = np.abs(d) > 1e-14 * dmax
    inv_d = np.where(safe, 1.0 / np.where(safe, d, 1.0), 1.0)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return SolveReport(np.zeros_like(b), 0, [0.0], True)
    r = b - spmv(A, x)
    history = [float(np.linalg.norm(r) / nb)]
    if history[0] <= tol:
        return SolveReport(x, 0, history, True)
    rhat = r.copy()
    rho_prev = 1.0
    alpha = 1.0
    omega = 1.0
    v = np.zeros_like(b)
    p = np.zeros_like(b)
    tiny = 1e-300
    best_x = x.copy()
    best_rr = history[0]
    mark_rr = best_rr
    mark_iter = 0
    for k in range(1, max_iter + 1):
        rho = float(rhat @ r)
        if abs(rho) < tiny or not np.isfinite(rho):
            raise BreakdownError(f"rho breakdown at iteration {k}",
                                 SolveReport(x, k - 1, history, False))
        beta = (rho / rho_prev) * (alpha / omega)
        p = r + beta * (p - omega * v)
        phat = inv_d * p
        v = spmv(A, phat)
        denom = float(rhat @ v)
        if abs(denom) < tiny or not np.isfinite(denom):
            raise BreakdownError(f"alpha breakdown at iteration {k}",
                                 SolveReport(x, k - 1, history, False))
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) / nb <= 0.1 * tol:
            xh = x + alpha * phat
            rr = float(np.linalg.norm(b - spmv(A, xh)) / nb)
            if rr <= tol:
                history.append(rr)
                return SolveReport(xh, k, history, True)
        shat = inv_d * s
        t = spmv(A, shat)
        tt = float(t @ t)
        if tt < tiny:
            raise BreakdownError(f"omega breakdown at iteration {k}",
                                 SolveReport(x, k - 1, history, False))
        omega = float(t @ s) / tt
        if abs(omega) < tiny or not np.isfinite(omega):
            raise BreakdownError(f"omega breakdown at iteration {k}",
                                 SolveReport(x, k - 1, history, False))
        x = x + alpha * phat + omega * shat
        r = s - omega * t
        rr = float(np.linalg.norm(b - spmv(A, x)) / nb)
        history.append(rr)
        if rr <= tol:
            return SolveReport(x, k, history, True)
        if not np.isfinite(rr):
            raise BreakdownError(f"non-finite residual at iteration {k}",
                                 SolveReport(x, k, history, False))
        if rr < best_rr:
            best_rr = rr
            best_x = x.copy()
        if k - mark_iter >= stall_window:
            if best_rr > stall_factor * mark_rr:
                return SolveReport(best_x, k, history, False)
            mark_rr = best_rr
            mark_iter = k
        rho_prev = rho
    return SolveReport(best_x, max_iter, history, False)
