"""Direct evaluation of least-squares functionals, norms and the discrete minus-one norm.

Everything here works from the represented fields at quadrature points and
never touches the assembled least-squares matrices, so it can be used to
cross-check them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .assembly import DEFAULT_DEGREE, assemble_p1_mass, assemble_poisson, element_data, sqrtm_spd
from .fespace import DiscreteField, LagrangeSpace
from .linalg import SolverError, cg_solve, smallest_generalized_eigenpair
from .quadrature import quad_rule

__all__ = [
    "FunctionalBreakdown",
    "MinusOneContext",
    "eval_functional",
    "eval_functional_minus1",
    "minus_one_norm_sq",
    "balance_residual_vector",
    "norm_pair",
    "norm_triple",
    "error_triple",
    "poincare_constant",
]


@dataclass
class FunctionalBreakdown:
    first_residual_sq: float
    second_residual_sq: float
    local_first: np.ndarray | None = field(default=None, repr=False)
    local_second: np.ndarray | None = field(default=None, repr=False)

    @property
    def total(self) -> float:
        return self.first_residual_sq + self.second_residual_sq


def _field_at(fld: DiscreteField, degree: int):
    ed = element_data(fld.mesh, degree)
    rule = quad_rule(degree)
    sigma = fld.sigma_at(rule.points)
    div = np.broadcast_to(fld.div_sigma()[:, None], ed.w.shape)
    u = fld.u_at(rule.points)
    grad = np.broadcast_to(fld.grad_u()[:, None, :], sigma.shape)
    return ed, sigma, div, u, grad


def _residuals(formulation: str, fld: DiscreteField, problem, with_data: bool, degree: int):
    formulation = formulation.upper().replace("-1", "").replace("_", "")
    ed, sigma, div, u, grad = _field_at(fld, degree)
    p = ed.pts
    A = problem.A(p)
    if formulation in ("L", "M"):
        half = sqrtm_spd(A)
        r1 = np.linalg.solve(half, sigma[..., None])[..., 0] + np.einsum("tqxy,tqy->tqx", half, grad)
        r2 = div + problem.X(u, grad, p)
    elif formulation == "J":
        r1 = sigma + np.einsum("tqxy,tqy->tqx", A, grad) + problem.b(p) * u[..., None]
        r2 = div + problem.c(p) * u
    else:
        raise ValueError(f"unknown formulation {formulation!r}")
    if with_data:
        f, f2 = problem.data(formulation)
        r2 = r2 - f(p)
        if f2 is not None:
            r1 = r1 - np.einsum("tqxy,tqy->tqx", sqrtm_spd(A), f2(p))
    return ed, r1, r2


def eval_functional(
    formulation: str, fld: DiscreteField, problem, with_data: bool = True, degree: int = DEFAULT_DEGREE
) -> FunctionalBreakdown:
    """Evaluate ``L``, ``J`` or ``M`` at ``fld``; element contributions are kept."""
    _check_mesh(fld, problem)
    ed, r1, r2 = _residuals(formulation, fld, problem, with_data, degree)
    loc1 = np.einsum("tq,tqx,tqx->t", ed.w, r1, r1)
    loc2 = np.einsum("tq,tq->t", ed.w, r2**2)
    return FunctionalBreakdown(float(loc1.sum()), float(loc2.sum()), loc1, loc2)


def _check_mesh(fld: DiscreteField, problem) -> None:
    mesh = fld.mesh
    if problem.domain == "square":
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        if np.any(lo < -1e-12) or np.any(hi > 1 + 1e-12):
            raise ValueError("field mesh does not match the problem domain")


# --------------------------------------------------------------- minus one
class MinusOneContext:
    """Discrete solution operator ``S_h`` of the Poisson problem on a P1 space."""

    def __init__(self, p1: LagrangeSpace, tol: float = 1e-12):
        self.p1 = p1
        self.tol = tol
        self.poisson = assemble_poisson(p1).matrix

    def solve(self, r: np.ndarray) -> np.ndarray:
        z, rep = cg_solve(self.poisson, r, tol=self.tol)
        if not rep.converged:
            raise SolverError(f"Poisson solve failed in minus-one norm (residual {rep.final_residual:.2e})")
        return z


def minus_one_norm_sq(r: np.ndarray, ctx: MinusOneContext) -> float:
    """``r^T S_h r`` for a functional given by its values on the free P1 basis."""
    r = np.asarray(r, dtype=float)
    if r.shape != (ctx.p1.free_dofs.size,):
        raise ValueError("residual vector must be indexed by the free P1 dofs")
    return float(max(r @ ctx.solve(r), 0.0))


def balance_residual_vector(
    formulation: str, fld: DiscreteField, problem, with_data: bool = True, degree: int = DEFAULT_DEGREE
) -> np.ndarray:
    """``(R2(tau, v) - f, phi_i)`` for every free P1 basis function ``phi_i``."""
    ed, _, r2 = _residuals(formulation, fld, problem, with_data, degree)
    local = np.einsum("tq,tq,qi->ti", ed.w, r2, ed.lam)
    mesh = fld.mesh
    full = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return full[fld.p1.free_dofs]


def eval_functional_minus1(
    formulation: str,
    fld: DiscreteField,
    problem,
    ctx: MinusOneContext,
    with_data: bool = True,
    degree: int = DEFAULT_DEGREE,
) -> FunctionalBreakdown:
    """``L_{-1}`` or ``J_{-1}``: balance residual measured in the discrete minus-one norm."""
    base = formulation.upper().replace("-1", "").replace("_", "")
    if base not in ("L", "J"):
        raise ValueError(f"minus-one functionals exist for L and J, got {formulation!r}")
    first = eval_functional(base, fld, problem, with_data, degree).first_residual_sq
    r = balance_residual_vector(base, fld, problem, with_data, degree)
    return FunctionalBreakdown(first, minus_one_norm_sq(r, ctx))


# -------------------------------------------------------------------- norms
def _norm_parts(fld: DiscreteField):
    rule = quad_rule(2)
    mesh = fld.mesh
    w = 2.0 * mesh.areas[:, None] * rule.weights
    s = fld.sigma_at(rule.points)
    sig = float(np.einsum("tq,tqx,tqx->", w, s, s))
    div = float(mesh.areas @ fld.div_sigma() ** 2)
    g = fld.grad_u()
    grad = float(mesh.areas @ np.einsum("tx,tx->t", g, g))
    return sig, div, grad


def norm_pair(fld: DiscreteField) -> float:
    """``||(tau, v)|| = (||tau||^2 + ||grad v||^2)^(1/2)``."""
    sig, _, grad = _norm_parts(fld)
    return float(np.sqrt(sig + grad))


def norm_triple(fld: DiscreteField) -> float:
    """``|||(tau, v)||| = (||tau||^2 + ||div tau||^2 + ||grad v||^2)^(1/2)``."""
    sig, div, grad = _norm_parts(fld)
    return float(np.sqrt(sig + div + grad))


@dataclass
class ErrorParts:
    """Element-wise squared error contributions against an exact solution."""

    flux: np.ndarray  # ||E||_K^2
    div: np.ndarray  # ||div E||_K^2
    grad: np.ndarray  # ||grad e||_K^2
    value: np.ndarray  # ||e||_K^2

    @property
    def local_triple(self) -> np.ndarray:
        return self.flux + self.div + self.grad

    @property
    def triple(self) -> float:
        return float(np.sqrt(self.local_triple.sum()))


def error_triple(fld: DiscreteField, problem, formulation: str = "M", degree: int = 6) -> ErrorParts:
    """Element-wise pieces of ``|||(sigma - sigma_h, u - u_h)|||`` by quadrature."""
    u, grad_u, sigma, div_sigma = problem.exact(formulation)
    ed, s_h, d_h, u_h, g_h = _field_at(fld, degree)
    p = ed.pts
    E = sigma(p) - s_h
    dE = div_sigma(p) - d_h
    ge = grad_u(p) - g_h
    e = u(p) - u_h
    return ErrorParts(
        np.einsum("tq,tqx,tqx->t", ed.w, E, E),
        np.einsum("tq,tq->t", ed.w, dE**2),
        np.einsum("tq,tqx,tqx->t", ed.w, ge, ge),
        np.einsum("tq,tq->t", ed.w, e**2),
    )


def poincare_constant(p1: LagrangeSpace, tol: float = 1e-8, seed: int = 0) -> float:
    """Discrete Poincare constant ``1 / sqrt(lambda_min(stiffness, mass))``."""
    K = assemble_poisson(p1).matrix
    M = assemble_p1_mass(p1).matrix
    est = smallest_generalized_eigenpair(K, M, tol=tol, seed=seed)
    return float(1.0 / np.sqrt(est.lambda_min))
