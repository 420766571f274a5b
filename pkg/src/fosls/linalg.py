"""Symmetric sparse linear algebra: Jacobi-preconditioned CG and a pencil probe."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolverError",
    "SolverReport",
    "SpectralEstimate",
    "cg_solve",
    "cholesky_solve",
    "smallest_generalized_eigenpair",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverReport:
    iterations: int
    final_residual: float
    converged: bool


@dataclass(frozen=True)
class SpectralEstimate:
    lambda_min: float
    lambda_max: float
    iterations: int
    residual: float  # relative eigen-residual of the lambda_min pair
    converged: bool = True


def cg_solve(A, b, tol: float = 1e-10, maxit: int | None = None, x0=None, precondition: bool = True):
    """Conjugate gradients with a diagonal (Jacobi) preconditioner.

    Returns ``(x, SolverReport)``; ``final_residual`` is ``||b - A x|| / ||b||``.
    Running out of iterations is reported, not raised.
    """
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise SolverError("right-hand side contains non-finite values")
    data = A.data if sp.issparse(A) else np.asarray(A)
    if not np.all(np.isfinite(data)):
        raise SolverError("matrix contains non-finite values")
    n = b.size
    maxit = 10 * n if maxit is None else maxit
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), SolverReport(0, 0.0, True)

    if precondition:
        d = A.diagonal() if sp.issparse(A) else np.diag(A).copy()
        if np.any(d <= 0):
            raise SolverError("Jacobi preconditioner needs a positive diagonal")
        dinv = 1.0 / d
    else:
        dinv = np.ones(n)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    it = 0
    while True:
        r = b - A @ x
        res = np.linalg.norm(r) / bnorm
        if res <= tol or it >= maxit:
            break
        # the recursive residual drifts from the true one; restart until they agree
        z = dinv * r
        p = z.copy()
        rz = r @ z
        while res > tol and it < maxit:
            Ap = A @ p
            pAp = p @ Ap
            if pAp <= 0 or not np.isfinite(pAp):
                raise SolverError(f"CG breakdown: p^T A p = {pAp:.3e} (matrix not SPD?)")
            alpha = rz / pAp
            x += alpha * p
            r -= alpha * Ap
            z = dinv * r
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
            it += 1
            res = np.linalg.norm(r) / bnorm
    return x, SolverReport(it, float(res), bool(res <= tol))


def cholesky_solve(A, b) -> np.ndarray:
    """Dense Cholesky solve; an oracle for small systems."""
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    return sla.cho_solve(sla.cho_factor(dense), np.asarray(b, dtype=float))


def _ritz(B, G, Y):
    """Rayleigh-Ritz on span(Y): ascending Ritz values and G-orthonormal vectors."""
    Bs = Y.T @ (B @ Y)
    Gs = Y.T @ (G @ Y)
    Bs = 0.5 * (Bs + Bs.T)
    Gs = 0.5 * (Gs + Gs.T)
    vals, vecs = sla.eigh(Bs, Gs)
    return vals, Y @ vecs


def smallest_generalized_eigenpair(
    B,
    G,
    tol: float = 1e-6,
    maxit: int = 500,
    seed: int = 0,
    block: int = 6,
) -> SpectralEstimate:
    """Extreme eigenvalues of the symmetric definite pencil ``B x = lambda G x``.

    ``lambda_min`` comes from block inverse iteration (each step solves
    ``B Y = G X``), ``lambda_max`` from block power iteration (each step
    solves ``G Y = B X``); both G-orthonormalize the block by a
    Rayleigh-Ritz step. Both matrices are factored once by sparse LU so an
    iteration costs only triangular solves. Iteration stops once the
    extreme Ritz pair satisfies ``||B x - lambda G x|| <= tol ||B x||``. The block
    size speeds up convergence when the extreme eigenvalues are clustered.
    """
    if B.shape != G.shape or B.shape[0] != B.shape[1]:
        raise ValueError("B and G must be square matrices of equal size")
    n = B.shape[0]
    k = max(1, min(block, n))
    B = sp.csc_matrix(B)
    G = sp.csc_matrix(G)
    rng = np.random.default_rng(seed)
    start = rng.standard_normal((n, k))

    def factor(M, name):
        try:
            lu = spla.splu(M)
        except RuntimeError as exc:  # exactly singular
            raise SolverError(f"{name} is singular: {exc}") from exc
        return lu.solve

    def residual(lam, x):
        Bx = B @ x
        return np.linalg.norm(Bx - lam * (G @ x)) / np.linalg.norm(Bx)

    def iterate(solve, rhs_with, pick):
        X = start
        for it in range(1, maxit + 1):
            Y = solve(np.asarray(rhs_with @ X))
            if not np.all(np.isfinite(Y)):
                raise SolverError("non-finite iterate in eigen-probe")
            vals, X = _ritz(B, G, Y)
            res = residual(vals[pick], X[:, pick])
            if res <= tol:
                return vals[pick], res, it, True
        return vals[pick], res, maxit, False

    lam_min, resid, it_min, ok_min = iterate(factor(B, "B"), G, 0)
    lam_max, _, it_max, ok_max = iterate(factor(G, "G"), B, -1)
    if not (ok_min and ok_max):
        log.warning("eigen-probe did not reach tolerance %.1e in %d iterations", tol, maxit)
    return SpectralEstimate(
        float(lam_min), float(max(lam_max, lam_min)), it_min + it_max, float(resid), ok_min and ok_max
    )
