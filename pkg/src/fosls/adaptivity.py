"""Element indicators of the least-squares functional, bulk marking, adaptive loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .fespace import DiscreteField
from .functionals import eval_functional
from .linalg import SolverReport
from .lsfem import solve_least_squares
from .mesh import Mesh, refine_bisection

__all__ = ["EstimatorResult", "AdaptiveStep", "estimate", "dorfler_mark", "adaptive_loop"]

log = logging.getLogger(__name__)


@dataclass
class EstimatorResult:
    eta_local: np.ndarray  # per triangle
    eta_global: float

    @property
    def eta_sq(self) -> np.ndarray:
        return self.eta_local**2


@dataclass
class AdaptiveStep:
    iteration: int
    mesh: Mesh
    field: DiscreteField
    estimate: EstimatorResult
    report: SolverReport
    dofs: int
    marked: np.ndarray


def estimate(fld: DiscreteField, problem, formulation: str = "M") -> EstimatorResult:
    """Local indicators: the functional's two residuals integrated over each triangle.

    The global estimator squared is the functional value itself.
    """
    br = eval_functional(formulation, fld, problem)
    local_sq = br.local_first + br.local_second
    return EstimatorResult(np.sqrt(local_sq), float(np.sqrt(local_sq.sum())))


def dorfler_mark(est: EstimatorResult, theta: float = 0.5) -> np.ndarray:
    """Smallest set carrying ``theta**2`` of the squared estimator.

    Elements are taken in order of decreasing indicator, ties broken by the
    lower triangle index. Elements with a zero indicator are never marked.
    """
    if not 0.0 < theta <= 1.0:
        raise ValueError(f"theta must lie in (0, 1], got {theta!r}")
    eta_sq = est.eta_sq
    order = np.lexsort((np.arange(eta_sq.size), -eta_sq))
    total = eta_sq.sum()
    if total <= 0.0:
        return np.empty(0, dtype=np.int64)
    cumulative = np.cumsum(eta_sq[order])
    target = theta**2 * total * (1.0 - 1e-12)
    count = int(np.searchsorted(cumulative, target, side="left")) + 1
    chosen = order[: min(count, order.size)]
    return np.sort(chosen[eta_sq[chosen] > 0.0])


def adaptive_loop(
    problem,
    initial_mesh: Mesh,
    theta: float = 0.5,
    max_dofs: int = 20000,
    formulation: str = "M",
    max_iterations: int = 100,
    stop_eta: float = 1e-10,
    tol: float = 1e-10,
    maxit_factor: int = 50,
) -> list[AdaptiveStep]:
    """Solve, estimate, mark and refine until the dof budget is exhausted.

    The loop also stops once the estimator drops below ``stop_eta`` (the
    data are then reproduced exactly) or after ``max_iterations`` solves.
    Jacobi-preconditioned CG needs many iterations on strongly graded
    meshes, so each solve may take ``maxit_factor`` times the number of
    unknowns.
    """
    steps: list[AdaptiveStep] = []
    mesh = initial_mesh
    for it in range(max_iterations):
        maxit = maxit_factor * (mesh.n_edges + mesh.n_vertices)
        fld, report, system = solve_least_squares(formulation, problem, mesh, tol=tol, maxit=maxit)
        est = estimate(fld, problem, formulation)
        dofs = system.matrix.shape[0]
        done = est.eta_global <= stop_eta or dofs >= max_dofs or it == max_iterations - 1
        marked = np.empty(0, dtype=np.int64) if done else dorfler_mark(est, theta)
        steps.append(AdaptiveStep(it, mesh, fld, est, report, dofs, marked))
        log.info("adaptive iteration %d: dofs=%d eta=%.4e marked=%d", it, dofs, est.eta_global, marked.size)
        if len(steps) > 1 and est.eta_global > 1.1 * steps[-2].estimate.eta_global:
            log.warning("estimator grew from %.3e to %.3e", steps[-2].estimate.eta_global, est.eta_global)
        if done:
            break
        mesh = refine_bisection(mesh, marked)
    return steps
