"""Assembly of least-squares systems, Gram matrices and standard P1 forms.

Unknowns are ordered flux block first (RT0 edge dofs) and scalar block second
(P1 vertex dofs). Constrained dofs are eliminated: Neumann edges carry zero
flux, Dirichlet vertices carry the problem's boundary data (zero unless the
problem supplies ``dirichlet_data``).

Formulations, written as ``||R1(tau, v) - g1||^2 + ||R2(tau, v) - g2||^2``:

* ``L`` / ``M``: ``R1 = A^{-1/2} tau + A^{1/2} grad v``, ``R2 = div tau + b.grad v + c v``,
  ``g1 = A^{1/2} f2`` (zero for ``L``), ``g2 = f1``.
* ``J``: ``R1 = tau + A grad v + b v``, ``R2 = div tau + c v``, ``g1 = 0``, ``g2 = f``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fespace import (
    DiscreteField,
    LagrangeSpace,
    RTSpace,
    eval_p1_basis,
    eval_rt0_basis,
    interpolate_p1,
    map_to_physical,
    p1_gradients,
)
from .quadrature import quad_rule

__all__ = [
    "FORMULATIONS",
    "SparseSystem",
    "CoefficientError",
    "sqrtm_spd",
    "assemble_ls_system",
    "assemble_gram",
    "assemble_standard_form",
    "standard_form_local",
    "element_data",
    "assemble_poisson",
    "assemble_p1_mass",
    "assemble_p1_load",
]

FORMULATIONS = ("L", "J", "M")
DEFAULT_DEGREE = 4


class CoefficientError(ValueError):
    """Diffusion coefficient violates uniform symmetric positive definiteness."""


@dataclass
class SparseSystem:
    """Linear system on the free dofs plus the data needed to map back to fields."""

    matrix: sp.csr_matrix
    rhs: np.ndarray | None
    dof_offsets: tuple[int, int, int]  # (0, start of u block, total)
    rt: RTSpace | None
    p1: LagrangeSpace
    sigma_fixed: np.ndarray | None = None  # full-length flux vector holding constrained values
    u_fixed: np.ndarray | None = None

    @property
    def n_sigma(self) -> int:
        return self.dof_offsets[1]

    def expand(self, x: np.ndarray) -> DiscreteField:
        """Insert free-dof values into full coefficient vectors."""
        sigma = self.sigma_fixed.copy() if self.sigma_fixed is not None else np.zeros(self.rt.dof_count)
        u = self.u_fixed.copy() if self.u_fixed is not None else np.zeros(self.p1.dof_count)
        sigma[self.rt.free_dofs] = x[: self.n_sigma]
        u[self.p1.free_dofs] = x[self.n_sigma :]
        return DiscreteField(self.rt, self.p1, sigma, u)

    def restrict(self, field: DiscreteField) -> np.ndarray:
        return np.concatenate([field.sigma[self.rt.free_dofs], field.u[self.p1.free_dofs]])


# ------------------------------------------------------------------ helpers
def sqrtm_spd(A: np.ndarray) -> np.ndarray:
    """Closed-form square root of symmetric positive definite 2x2 matrices ``(..., 2, 2)``."""
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    s = np.sqrt(det)
    t = np.sqrt(A[..., 0, 0] + A[..., 1, 1] + 2.0 * s)
    return (A + s[..., None, None] * np.eye(2)) / t[..., None, None]


def _inv2(A: np.ndarray) -> np.ndarray:
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    out = np.empty_like(A)
    out[..., 0, 0] = A[..., 1, 1]
    out[..., 1, 1] = A[..., 0, 0]
    out[..., 0, 1] = -A[..., 0, 1]
    out[..., 1, 0] = -A[..., 1, 0]
    return out / det[..., None, None]


def check_spd(A: np.ndarray) -> None:
    asym = np.abs(A[..., 0, 1] - A[..., 1, 0])
    scale = np.abs(A).max(axis=(-2, -1))
    det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] * A[..., 1, 0]
    if np.any(asym > 1e-12 * scale) or np.any(A[..., 0, 0] <= 0) or np.any(det <= 0):
        raise CoefficientError(
            "diffusion coefficient A is not uniformly symmetric positive definite "
            "at some quadrature point (y^T A y <= 0 detected)"
        )


@dataclass
class _ElementData:
    pts: np.ndarray  # (nt, nq, 2)
    w: np.ndarray  # (nt, nq) physical weights
    phi: np.ndarray  # (nt, nq, 3, 2) RT0 values
    div: np.ndarray  # (nt, 3)
    lam: np.ndarray  # (nq, 3) P1 values
    grad: np.ndarray  # (nt, 3, 2) P1 gradients


def element_data(mesh, degree: int = DEFAULT_DEGREE) -> _ElementData:
    rule = quad_rule(degree)
    coords = mesh.coords
    phi, div = eval_rt0_basis(coords, rule.points, mesh.edge_signs)
    lam, _ = eval_p1_basis(rule.points)
    w = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    return _ElementData(map_to_physical(coords, rule.points), w, phi, div, lam, p1_gradients(coords))


def _check_spaces(rt, p1):
    if rt.mesh is not p1.mesh:
        raise ValueError("RT and Lagrange spaces must be built on the same mesh")


def local_residual_operators(formulation: str, problem, ed: _ElementData):
    """Residual operators applied to the six local basis functions.

    Returns ``R1`` of shape ``(nt, nq, 6, 2)`` and ``R2`` of shape ``(nt, nq, 6)``;
    local functions 0-2 are RT0, 3-5 are P1.
    """
    nt, nq = ed.w.shape
    A = problem.A(ed.pts)
    check_spd(A)
    b = problem.b(ed.pts)
    c = problem.c(ed.pts)
    grad = np.broadcast_to(ed.grad[:, None], (nt, nq, 3, 2))
    lam = np.broadcast_to(ed.lam[None], (nt, nq, 3))
    R1 = np.empty((nt, nq, 6, 2))
    R2 = np.empty((nt, nq, 6))
    R2[..., :3] = ed.div[:, None, :]
    if formulation in ("L", "M"):
        half = sqrtm_spd(A)
        R1[..., :3, :] = np.einsum("tqxy,tqiy->tqix", _inv2(half), ed.phi)
        R1[..., 3:, :] = np.einsum("tqxy,tqiy->tqix", half, grad)
        R2[..., 3:] = np.einsum("tqx,tqix->tqi", b, grad) + c[..., None] * lam
    elif formulation == "J":
        R1[..., :3, :] = ed.phi
        R1[..., 3:, :] = np.einsum("tqxy,tqiy->tqix", A, grad) + b[:, :, None, :] * lam[..., None]
        R2[..., 3:] = c[..., None] * lam
    else:
        raise ValueError(f"unknown formulation {formulation!r}; expected one of {FORMULATIONS}")
    return R1, R2


def _residual_data(formulation: str, problem, ed: _ElementData):
    f, f2 = problem.data(formulation)
    g2 = f(ed.pts)
    if f2 is None:
        g1 = np.zeros(ed.pts.shape)
    else:
        g1 = np.einsum("tqxy,tqy->tqx", sqrtm_spd(problem.A(ed.pts)), f2(ed.pts))
    return g1, g2


def _global_dofs(mesh) -> np.ndarray:
    return np.hstack([mesh.triangle_edges, mesh.n_edges + mesh.triangles])


def _scatter(local: np.ndarray, dofs: np.ndarray, size: int) -> sp.csr_matrix:
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(size, size)).tocsr()


def _constrained_values(problem, rt: RTSpace, p1: LagrangeSpace):
    sigma_fixed = np.zeros(rt.dof_count)
    u_fixed = np.zeros(p1.dof_count)
    data = getattr(problem, "dirichlet_data", None) if problem is not None else None
    if data is not None:
        lifted = interpolate_p1(p1, data)
        u_fixed[p1.constrained_dofs] = lifted[p1.constrained_dofs]
    return sigma_fixed, u_fixed


def _eliminate(full: sp.csr_matrix, load: np.ndarray | None, free: np.ndarray, fixed: np.ndarray):
    matrix = full[free][:, free].tocsr()
    if load is None:
        return matrix, None
    rhs = load[free] - full[free] @ fixed
    return matrix, rhs


# ------------------------------------------------------------- LS systems
def assemble_ls_system(
    formulation: str,
    problem,
    rt: RTSpace,
    p1: LagrangeSpace,
    degree: int = DEFAULT_DEGREE,
    homogeneous: bool = False,
) -> SparseSystem:
    """Euler-Lagrange system of the least-squares functional on the free dofs.

    With ``homogeneous=True`` the data are ignored (right-hand side and
    boundary lift are zero), which gives the quadratic form ``F(.; 0)``.
    """
    formulation = formulation.upper()
    _check_spaces(rt, p1)
    if formulation == "M" and not problem.is_pure_dirichlet:
        raise ValueError("formulation M requires a pure Dirichlet boundary")
    mesh = rt.mesh
    ed = element_data(mesh, degree)
    R1, R2 = local_residual_operators(formulation, problem, ed)
    local = np.einsum("tq,tqix,tqjx->tij", ed.w, R1, R1) + np.einsum("tq,tqi,tqj->tij", ed.w, R2, R2)
    size = mesh.n_edges + mesh.n_vertices
    dofs = _global_dofs(mesh)
    full = _scatter(local, dofs, size)

    if homogeneous:
        load = np.zeros(size)
        sigma_fixed, u_fixed = np.zeros(rt.dof_count), np.zeros(p1.dof_count)
    else:
        g1, g2 = _residual_data(formulation, problem, ed)
        local_rhs = np.einsum("tq,tqix,tqx->ti", ed.w, R1, g1) + np.einsum("tq,tqi,tq->ti", ed.w, R2, g2)
        load = np.bincount(dofs.ravel(), weights=local_rhs.ravel(), minlength=size)
        sigma_fixed, u_fixed = _constrained_values(problem, rt, p1)

    free = np.concatenate([rt.free_dofs, mesh.n_edges + p1.free_dofs])
    fixed = np.concatenate([sigma_fixed, u_fixed])
    matrix, rhs = _eliminate(full, load, free, fixed)
    n_sig = rt.free_dofs.size
    return SparseSystem(matrix, rhs, (0, n_sig, free.size), rt, p1, sigma_fixed, u_fixed)


def assemble_gram(norm: str, rt: RTSpace, p1: LagrangeSpace, degree: int = 2) -> SparseSystem:
    """Gram matrix of ``||(tau, v)||^2`` (``PAIR``) or ``|||(tau, v)|||^2`` (``TRIPLE``)."""
    norm = norm.upper()
    if norm not in ("PAIR", "TRIPLE"):
        raise ValueError(f"unknown norm {norm!r}; expected PAIR or TRIPLE")
    _check_spaces(rt, p1)
    mesh = rt.mesh
    ed = element_data(mesh, degree)
    nt = mesh.n_triangles
    local = np.zeros((nt, 6, 6))
    local[:, :3, :3] = np.einsum("tq,tqix,tqjx->tij", ed.w, ed.phi, ed.phi)
    if norm == "TRIPLE":
        local[:, :3, :3] += mesh.areas[:, None, None] * ed.div[:, :, None] * ed.div[:, None, :]
    local[:, 3:, 3:] = mesh.areas[:, None, None] * np.einsum("tix,tjx->tij", ed.grad, ed.grad)
    full = _scatter(local, _global_dofs(mesh), mesh.n_edges + mesh.n_vertices)
    free = np.concatenate([rt.free_dofs, mesh.n_edges + p1.free_dofs])
    matrix, _ = _eliminate(full, None, free, None)
    return SparseSystem(matrix, None, (0, rt.free_dofs.size, free.size), rt, p1)


# ----------------------------------------------------------- P1 forms
def _p1_system(p1: LagrangeSpace, local: np.ndarray, load: np.ndarray | None, problem=None) -> SparseSystem:
    mesh = p1.mesh
    full = _scatter(local, mesh.triangles, mesh.n_vertices)
    _, u_fixed = (None, np.zeros(p1.dof_count)) if problem is None else _constrained_values(
        problem, RTSpace(mesh), p1
    )
    matrix, rhs = _eliminate(full, load, p1.free_dofs, u_fixed)
    return SparseSystem(matrix, rhs, (0, 0, p1.free_dofs.size), None, p1, None, u_fixed)


def assemble_p1_load(p1: LagrangeSpace, scalar=None, vector=None, degree: int = DEFAULT_DEGREE) -> np.ndarray:
    """Full-length load vector ``(g, phi_i) + (f, grad phi_i)`` for callables ``g``, ``f``."""
    mesh = p1.mesh
    ed = element_data(mesh, degree)
    local = np.zeros((mesh.n_triangles, 3))
    if scalar is not None:
        local += np.einsum("tq,tq,qi->ti", ed.w, scalar(ed.pts), ed.lam)
    if vector is not None:
        local += np.einsum("tq,tqx,tix->ti", ed.w, vector(ed.pts), ed.grad)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)


def standard_form_local(problem, mesh, degree: int = DEFAULT_DEGREE):
    """Element matrices of the diffusion, convection and reaction parts of ``a``.

    Each has shape ``(nt, 3, 3)`` with entry ``[t, i, j] = a_K(phi_j, phi_i)``.
    """
    ed = element_data(mesh, degree)
    A = problem.A(ed.pts)
    b = problem.b(ed.pts)
    c = problem.c(ed.pts)
    stiff = np.einsum("tq,tqxy,tjy,tix->tij", ed.w, A, ed.grad, ed.grad)
    conv = np.einsum("tq,tqx,tjx,qi->tij", ed.w, b, ed.grad, ed.lam)
    react = np.einsum("tq,tq,qj,qi->tij", ed.w, c, ed.lam, ed.lam)
    return stiff, conv, react


def assemble_standard_form(problem, p1: LagrangeSpace, degree: int = DEFAULT_DEGREE) -> SparseSystem:
    """Matrix of ``a(phi_j, phi_i) = (A grad phi_j, grad phi_i) + (X phi_j, phi_i)``.

    The load is ``(f1, v) + (A f2, grad v)``. The matrix is nonsymmetric
    whenever ``b`` is nonzero.
    """
    mesh = p1.mesh
    ed = element_data(mesh, degree)
    stiff, conv, react = standard_form_local(problem, mesh, degree)
    local_rhs = np.einsum("tq,tq,qi->ti", ed.w, problem.f1(ed.pts), ed.lam)
    if problem.f2 is not None:
        Af2 = np.einsum("tqxy,tqy->tqx", problem.A(ed.pts), problem.f2(ed.pts))
        local_rhs += np.einsum("tq,tqx,tix->ti", ed.w, Af2, ed.grad)
    load = np.bincount(mesh.triangles.ravel(), weights=local_rhs.ravel(), minlength=mesh.n_vertices)
    return _p1_system(p1, stiff + conv + react, load, problem)


def assemble_poisson(p1: LagrangeSpace) -> SparseSystem:
    """P1 stiffness matrix ``(grad phi_j, grad phi_i)`` on the free dofs."""
    mesh = p1.mesh
    g = p1_gradients(mesh.coords)
    local = mesh.areas[:, None, None] * np.einsum("tix,tjx->tij", g, g)
    return _p1_system(p1, local, None)


def assemble_p1_mass(p1: LagrangeSpace) -> SparseSystem:
    """P1 mass matrix on the free dofs."""
    mesh = p1.mesh
    ref = (np.ones((3, 3)) + np.eye(3)) / 12.0
    local = mesh.areas[:, None, None] * ref[None]
    return _p1_system(p1, local, None)
