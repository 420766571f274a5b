"""Discrete least-squares solve on a given mesh."""
from __future__ import annotations

import logging

from .assembly import DEFAULT_DEGREE, SparseSystem, assemble_ls_system
from .fespace import DiscreteField, LagrangeSpace, RTSpace
from .linalg import SolverError, SolverReport, cg_solve
from .mesh import Mesh

__all__ = ["solve_least_squares"]

log = logging.getLogger(__name__)


def solve_least_squares(
    formulation: str,
    problem,
    mesh: Mesh,
    tol: float = 1e-10,
    maxit: int | None = None,
    degree: int = DEFAULT_DEGREE,
) -> tuple[DiscreteField, SolverReport, SparseSystem]:
    """Minimize the ``formulation`` functional over RT0 x P1 on ``mesh``.

    Raises :class:`SolverError` if CG does not converge.
    """
    rt, p1 = RTSpace(mesh), LagrangeSpace(mesh)
    system = assemble_ls_system(formulation, problem, rt, p1, degree=degree)
    x, report = cg_solve(system.matrix, system.rhs, tol=tol, maxit=maxit)
    log.info(
        "%s/%s: %d triangles, %d dofs, CG %d its, residual %.2e",
        problem.name, formulation, mesh.n_triangles, system.matrix.shape[0],
        report.iterations, report.final_residual,
    )
    if not report.converged:
        raise SolverError(
            f"CG did not converge for {problem.name}/{formulation} "
            f"({report.iterations} iterations, residual {report.final_residual:.2e})"
        )
    return system.expand(x), report, system
