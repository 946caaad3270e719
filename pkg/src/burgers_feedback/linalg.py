"""Sparse operators and the per-step linear solve.

Assembled bilinear forms are plain ``scipy.sparse.csr_matrix`` objects kept in
canonical form (sorted column indices, duplicates summed).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

DIRECT_LU = "direct-lu"
BICGSTAB = "bicgstab"
# auto method: LU up to the n=64 structured mesh, BiCGStab above
LU_MAX_DIMENSION = 65 * 65


class SolverFailure(RuntimeError):
    """Linear solve failed; ``residual`` is the relative residual reached."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    method: str | None = None  # None picks by dimension
    rtol: float = 1e-10
    max_iter: int | None = None  # default 10 * dimension

    def __post_init__(self):
        if not self.rtol > 0:
            raise ValueError("solver tolerance must be positive")
        if self.method not in (None, DIRECT_LU, BICGSTAB):
            raise ValueError(f"unknown solver method {self.method!r}")

    def resolve(self, dimension: int) -> str:
        if self.method is not None:
            return self.method
        return DIRECT_LU if dimension <= LU_MAX_DIMENSION else BICGSTAB


def canonical(A) -> sp.csr_matrix:
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    return A


def add_scaled(A, B, s: float) -> sp.csr_matrix:
    """``A + s*B`` on the union pattern."""
    if A.shape != B.shape:
        raise ValueError(f"dimension mismatch: {A.shape} vs {B.shape}")
    return canonical(sp.csr_matrix(A) + s * sp.csr_matrix(B))


def _relres(A, x, b) -> float:
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def bicgstab(A, b, x0=None, rtol: float = 1e-10, max_iter: int | None = None):
    """Unpreconditioned BiCGStab. Returns ``(x, iterations)``; raises on stall or no convergence."""
    n = len(b)
    max_iter = 10 * n if max_iter is None else max_iter
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(n), 0
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - A @ x
    if np.linalg.norm(r) <= rtol * nb:
        return x, 0
    r_hat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)
    for it in range(1, max_iter + 1):
        rho_new = r_hat @ r
        if rho_new == 0.0 or omega == 0.0:
            raise SolverFailure("BiCGStab breakdown", np.linalg.norm(r) / nb)
        beta = (rho_new / rho) * (alpha / omega)
        rho = rho_new
        p = r + beta * (p - omega * v)
        v = A @ p
        alpha = rho / (r_hat @ v)
        s = r - alpha * v
        if np.linalg.norm(s) <= rtol * nb:
            x += alpha * p
            return x, it
        t = A @ s
        tt = t @ t
        omega = (t @ s) / tt if tt > 0 else 0.0
        x += alpha * p + omega * s
        r = s - omega * t
        if np.linalg.norm(r) <= rtol * nb:
            return x, it
        if not np.isfinite(omega):
            break
    raise SolverFailure("BiCGStab did not converge", np.linalg.norm(b - A @ x) / nb)


class LinearSolver:
    """Solver bound to one matrix; the LU factorization is computed once and reused."""

    def __init__(self, A, cfg: SolverConfig | None = None):
        self.A = canonical(A)
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("matrix must be square")
        self.cfg = cfg or SolverConfig()
        self.method = self.cfg.resolve(self.A.shape[0])
        self._lu = None
        if self.method == DIRECT_LU:
            try:
                self._lu = splu(self.A.tocsc())
            except RuntimeError as exc:
                raise SolverFailure(f"singular matrix: {exc}") from None

    def __call__(self, b, x0=None) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.shape != (self.A.shape[0],):
            raise ValueError("right-hand side length does not match matrix")
        tol = self.cfg.rtol
        if self.method == DIRECT_LU:
            x = self._lu.solve(b)
            res = _relres(self.A, x, b)
            if res > tol and np.isfinite(res):
                # one round of iterative refinement before giving up
                x = x + self._lu.solve(b - self.A @ x)
                res = _relres(self.A, x, b)
            if not (res <= tol):
                raise SolverFailure("direct solve missed tolerance", res)
            return x
        x, _ = bicgstab(self.A, b, x0=x0, rtol=tol, max_iter=self.cfg.max_iter)
        return x


def solve(A, b, cfg: SolverConfig | None = None, x0=None) -> np.ndarray:
    """Solve ``A x = b`` to ``||Ax - b|| <= rtol ||b||``."""
    return LinearSolver(A, cfg)(b, x0=x0)
