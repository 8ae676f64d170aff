"""Symmetric sparse matrices and the two Krylov solvers used by the package.

MINRES (Paige--Saunders) handles the symmetric-indefinite plastic saddle
system, including consistent singular ones; preconditioned CG handles the
SPD Newton step. Both are deterministic: fixed iteration arithmetic order,
no randomisation, and they return their full residual history.

MINRES tracks the residual norm through the QR recurrence (phi-bar), which
is monotone non-increasing by construction; when a preconditioner is in
use the recurrence tracks the preconditioned norm, so the solver verifies
the true residual before accepting convergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import ConvergenceError, IndefinitenessError, InvalidMatrixError


@dataclass(frozen=True)
class SolverConfig:
    """Iterative-solver tolerances.

    minres_tol is an absolute residual norm; pcg_tol and newton_tol are
    relative. The relative MINRES residual is recorded alongside the
    absolute one in solver reports.
    """

    minres_tol: float = 1e-5
    pcg_tol: float = 1e-5
    newton_tol: float = 1e-6
    minres_maxiter: int = 200000
    pcg_maxiter: int = 50000
    newton_maxiter: int = 50
    max_backtracks: int = 8

    def __post_init__(self):
        for name in ("minres_tol", "pcg_tol", "newton_tol"):
            if getattr(self, name) <= 0:
                raise InvalidMatrixError(f"{name} must be positive")


class SparseSymMatrix:
    """Symmetric sparse matrix in CSR storage (stored fully)."""

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix)
        if csr.shape[0] != csr.shape[1]:
            raise InvalidMatrixError(f"matrix must be square, got {csr.shape}")
        self.csr = csr

    @property
    def dim(self) -> int:
        return self.csr.shape[0]

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.csr @ v

    def __matmul__(self, v):
        return self.csr @ v

    def diagonal(self) -> np.ndarray:
        return self.csr.diagonal()

    def symmetry_error(self) -> float:
        """max |A - A^T| over all entries."""
        diff = self.csr - self.csr.T
        return 0.0 if diff.nnz == 0 else float(np.abs(diff.data).max())

    def max_abs(self) -> float:
        return 0.0 if self.csr.nnz == 0 else float(np.abs(self.csr.data).max())

    def assert_symmetric(self, rel=1e-10):
        err = self.symmetry_error()
        if err > rel * max(self.max_abs(), 1e-300):
            raise InvalidMatrixError(f"matrix asymmetry {err} exceeds tolerance")


def _as_matvec(A):
    """(matvec, dimension) for SparseSymMatrix, scipy sparse, ndarray, or operator."""
    if isinstance(A, SparseSymMatrix):
        return A.matvec, A.dim
    if sp.issparse(A):
        return (lambda v: A @ v), A.shape[0]
    if isinstance(A, np.ndarray):
        return (lambda v: A @ v), A.shape[0]
    if hasattr(A, "matvec") and hasattr(A, "dim"):
        return A.matvec, A.dim
    raise InvalidMatrixError(f"unsupported operator type {type(A)!r}")


class JacobiPreconditioner:
    """Diagonal (Jacobi) preconditioner: application multiplies by 1/diag(A)."""

    def __init__(self, diag: np.ndarray):
        diag = np.asarray(diag, dtype=float)
        if np.any(diag == 0.0):
            raise InvalidMatrixError("Jacobi preconditioner needs a nonzero diagonal")
        self.inv_diag = 1.0 / diag

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.inv_diag * v

    __call__ = apply


def jacobi_preconditioner(A) -> JacobiPreconditioner:
    if isinstance(A, SparseSymMatrix):
        diag = A.diagonal()
    elif sp.issparse(A):
        diag = A.diagonal()
    elif isinstance(A, np.ndarray):
        diag = np.diag(A)
    elif hasattr(A, "diagonal"):
        diag = A.diagonal()
    else:
        raise InvalidMatrixError(f"cannot extract diagonal from {type(A)!r}")
    return JacobiPreconditioner(diag)


class IdentityPreconditioner:
    def apply(self, v):
        return v

    __call__ = apply


def _sym_ortho(a: float, b: float):
    """Stable Givens rotation (c, s, r) with [c s; s -c] [a; b] = [r; 0]."""
    if b == 0.0:
        if a == 0.0:
            return 1.0, 0.0, 0.0
        return np.sign(a), 0.0, abs(a)
    if a == 0.0:
        return 0.0, np.sign(b), abs(b)
    if abs(b) > abs(a):
        tau = a / b
        s = np.sign(b) / np.sqrt(1.0 + tau * tau)
        c = s * tau
        r = b / s
    else:
        tau = b / a
        c = np.sign(a) / np.sqrt(1.0 + tau * tau)
        s = c * tau
        r = a / c
    return c, s, r


def minres_solve(A, rhs, config: SolverConfig | None = None, preconditioner=None,
                 tol: float | None = None, maxiter: int | None = None):
    """MINRES for symmetric (possibly indefinite/singular) systems A x = rhs.

    Stops when the residual norm drops below the absolute tolerance
    (config.minres_tol unless overridden). Returns (x, history) where
    history[k] is the residual-norm estimate after k iterations
    (history[0] = ||rhs||). Raises ConvergenceError at the iteration cap,
    carrying the last residual and the history.
    """
    config = config or SolverConfig()
    tol = config.minres_tol if tol is None else float(tol)
    maxiter = config.minres_maxiter if maxiter is None else int(maxiter)
    matvec, n = _as_matvec(A)
    b = np.asarray(rhs, dtype=float).reshape(n)
    M = preconditioner

    x = np.zeros(n)
    r1 = b.copy()
    y = M.apply(r1) if M is not None else r1
    beta1_sq = float(b @ y)
    if beta1_sq < 0:
        raise InvalidMatrixError("preconditioner is not positive definite")
    beta1 = np.sqrt(beta1_sq)
    norm_b = float(np.linalg.norm(b))
    history = [norm_b]
    if norm_b == 0.0 or beta1 == 0.0:
        return x, history
    if norm_b <= tol:
        return x, history

    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs = -1.0
    sn = 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()

    itn = 0
    target = tol if M is None else tol  # phibar target; trust-region refined below
    while itn < maxiter:
        itn += 1
        s = 1.0 / beta
        v = s * y
        y = matvec(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = M.apply(r2) if M is not None else r2
        oldb = beta
        beta_sq = float(r2 @ y)
        if beta_sq < 0:
            raise InvalidMatrixError("preconditioner is not positive definite")
        beta = np.sqrt(beta_sq)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        cs, sn, gamma = _sym_ortho(gbar, beta)
        gamma = max(gamma, np.finfo(float).eps)
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        history.append(abs(phibar))

        if abs(phibar) <= target:
            if M is None:
                return x, history
            true_res = float(np.linalg.norm(b - matvec(x)))
            history[-1] = true_res
            if true_res <= tol:
                return x, history
            target = max(abs(phibar) * 0.25, np.finfo(float).tiny)
        if beta <= np.finfo(float).eps * max(1.0, abs(alfa)):
            # Krylov space exhausted: best attainable (least-squares) solution
            final = float(np.linalg.norm(b - matvec(x)))
            history.append(final)
            if final <= tol:
                return x, history
            raise ConvergenceError(
                f"MINRES stagnated at residual {final} after {itn} iterations",
                residual=final,
                history=history,
            )

    final = float(np.linalg.norm(b - matvec(x)))
    raise ConvergenceError(
        f"MINRES hit iteration cap {maxiter} at residual {final}",
        residual=final,
        history=history,
    )


def pcg_solve(A, rhs, preconditioner=None, config: SolverConfig | None = None,
              tol: float | None = None, maxiter: int | None = None):
    """Preconditioned conjugate gradients for SPD systems.

    Stops at relative residual ||rhs - A x|| <= tol * ||rhs||. Raises
    IndefinitenessError on a direction of non-positive curvature and
    ConvergenceError at the iteration cap. Returns (x, history) with
    history[k] the true recursive residual norm after k iterations.
    """
    config = config or SolverConfig()
    tol = config.pcg_tol if tol is None else float(tol)
    maxiter = config.pcg_maxiter if maxiter is None else int(maxiter)
    matvec, n = _as_matvec(A)
    b = np.asarray(rhs, dtype=float).reshape(n)
    M = preconditioner or IdentityPreconditioner()

    x = np.zeros(n)
    r = b.copy()
    norm_b = float(np.linalg.norm(b))
    history = [norm_b]
    if norm_b == 0.0:
        return x, history
    threshold = tol * norm_b
    if norm_b <= threshold:
        return x, history

    z = M.apply(r)
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        Ap = matvec(p)
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            raise IndefinitenessError(
                f"non-positive curvature p^T A p = {pAp}; matrix is not SPD"
            )
        alpha = rz / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        res = float(np.linalg.norm(r))
        history.append(res)
        if res <= threshold:
            return x, history
        z = M.apply(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new

    raise ConvergenceError(
        f"PCG hit iteration cap {maxiter} at relative residual {history[-1] / norm_b}",
        residual=history[-1],
        history=history,
    )


def write_residual_history(path, history):
    """Residual history as CSV with columns (iteration, residual)."""
    with open(path, "w") as fh:
        fh.write("iteration,residual\n")
        for k, r in enumerate(history):
            fh.write(f"{k},{r:.17g}\n")
