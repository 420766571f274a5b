"""Lagrange P1 and lowest-order Raviart-Thomas spaces.

The RT0 basis function of a global edge has unit net flux across that edge
in the direction of the edge's global normal (see :mod:`fosls.mesh`) and
zero flux across every other edge.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import EdgeTag, Mesh
from .quadrature import gauss_legendre_01

__all__ = [
    "LagrangeSpace",
    "RTSpace",
    "DiscreteField",
    "eval_p1_basis",
    "eval_rt0_basis",
    "p1_gradients",
    "interpolate_p1",
    "interpolate_rt0",
    "map_to_physical",
]

_REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_REF_P1_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])


class LagrangeSpace:
    """Continuous piecewise linears; a dof per vertex, constrained on the Dirichlet closure."""

    degree = 1

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.dof_count = mesh.n_vertices
        self.constrained_dofs = mesh.dirichlet_vertices
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.constrained_dofs] = False
        self.free_dofs = np.flatnonzero(mask)

    def __repr__(self):
        return f"LagrangeSpace(dofs={self.dof_count}, free={self.free_dofs.size})"


class RTSpace:
    """Lowest-order Raviart-Thomas; a flux dof per edge, zero on Neumann edges."""

    order = 0

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.dof_count = mesh.n_edges
        self.constrained_dofs = np.flatnonzero(mesh.edge_tags == EdgeTag.NEUMANN)
        mask = np.ones(self.dof_count, dtype=bool)
        mask[self.constrained_dofs] = False
        self.free_dofs = np.flatnonzero(mask)

    def __repr__(self):
        return f"RTSpace(dofs={self.dof_count}, free={self.free_dofs.size})"


# ----------------------------------------------------------- basis functions
def eval_p1_basis(ref_points) -> tuple[np.ndarray, np.ndarray]:
    """Values and reference gradients of the three P1 shape functions.

    Returns ``values`` of shape ``(..., 3)`` and the constant gradients,
    shape ``(3, 2)``.
    """
    p = np.asarray(ref_points, dtype=float)
    x, y = p[..., 0], p[..., 1]
    values = np.stack([1.0 - x - y, x, y], axis=-1)
    return values, _REF_P1_GRADS.copy()


def _jacobians(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    jac = np.stack([coords[..., 1, :] - coords[..., 0, :], coords[..., 2, :] - coords[..., 0, :]], axis=-1)
    det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
    return jac, det


def map_to_physical(coords, ref_points) -> np.ndarray:
    """Affine map of reference points into each triangle: ``(..., nq, 2)``."""
    coords = np.asarray(coords, dtype=float)
    lam, _ = eval_p1_basis(ref_points)
    return np.einsum("qi,...ix->...qx", lam, coords)


def p1_gradients(coords) -> np.ndarray:
    """Physical gradients of the P1 shape functions, shape ``(..., 3, 2)``."""
    jac, det = _jacobians(np.asarray(coords, dtype=float))
    inv_t = np.empty_like(jac)
    inv_t[..., 0, 0] = jac[..., 1, 1]
    inv_t[..., 0, 1] = -jac[..., 1, 0]
    inv_t[..., 1, 0] = -jac[..., 0, 1]
    inv_t[..., 1, 1] = jac[..., 0, 0]
    inv_t /= det[..., None, None]
    return np.einsum("xy,...zy->...xz", _REF_P1_GRADS, inv_t)


def eval_rt0_basis(coords, ref_points, signs=None) -> tuple[np.ndarray, np.ndarray]:
    """RT0 shape functions on one or many triangles via the contravariant Piola map.

    Parameters
    ----------
    coords : array_like, shape (..., 3, 2)
        Counterclockwise vertex coordinates.
    ref_points : array_like, shape (nq, 2)
        Points in the reference triangle.
    signs : array_like, shape (..., 3), optional
        Global orientation signs of the local edges; defaults to outward.

    Returns
    -------
    values : ndarray, shape (..., nq, 3, 2)
    divergences : ndarray, shape (..., 3)
    """
    coords = np.asarray(coords, dtype=float)
    ref = np.atleast_2d(np.asarray(ref_points, dtype=float))
    jac, det = _jacobians(coords)
    scale = np.max(np.abs(coords[..., 1:, :] - coords[..., :1, :]), axis=(-2, -1)) ** 2
    if np.any(np.abs(det) < 1e-14 * scale) or np.any(scale == 0):
        raise ValueError("degenerate triangle in RT0 basis evaluation")
    # reference basis for the edge opposite vertex i: x_hat - p_hat_i
    ref_vals = ref[:, None, :] - _REF_VERTICES[None, :, :]
    values = np.einsum("...xy,qiy->...qix", jac, ref_vals) / det[..., None, None, None]
    div = np.broadcast_to((2.0 / det)[..., None], det.shape + (3,)).copy()
    if signs is not None:
        signs = np.asarray(signs, dtype=float)
        values = values * signs[..., None, :, None]
        div = div * signs
    return values, div


# ----------------------------------------------------------- discrete fields
@dataclass
class DiscreteField:
    """A pair ``(sigma_h, u_h)`` in RT0 x P1 given by its coefficient vectors."""

    rt: RTSpace
    p1: LagrangeSpace
    sigma: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if self.rt.mesh is not self.p1.mesh:
            raise ValueError("RT and Lagrange spaces live on different meshes")
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        if self.sigma.shape != (self.rt.dof_count,) or self.u.shape != (self.p1.dof_count,):
            raise ValueError("coefficient vector length does not match its space")

    @classmethod
    def zeros(cls, rt: RTSpace, p1: LagrangeSpace) -> "DiscreteField":
        return cls(rt, p1, np.zeros(rt.dof_count), np.zeros(p1.dof_count))

    @property
    def mesh(self) -> Mesh:
        return self.rt.mesh

    def sigma_at(self, ref_points) -> np.ndarray:
        """Flux values at mapped reference points, shape ``(nt, nq, 2)``."""
        m = self.mesh
        phi, _ = eval_rt0_basis(m.coords, ref_points, m.edge_signs)
        return np.einsum("tqix,ti->tqx", phi, self.sigma[m.triangle_edges])

    def div_sigma(self) -> np.ndarray:
        """Piecewise-constant divergence, shape ``(nt,)``."""
        m = self.mesh
        return (m.edge_signs * self.sigma[m.triangle_edges]).sum(axis=1) / m.areas

    def u_at(self, ref_points) -> np.ndarray:
        lam, _ = eval_p1_basis(ref_points)
        return self.u[self.mesh.triangles] @ lam.T

    def grad_u(self) -> np.ndarray:
        """Piecewise-constant gradient, shape ``(nt, 2)``."""
        g = p1_gradients(self.mesh.coords)
        return np.einsum("tix,ti->tx", g, self.u[self.mesh.triangles])


# ------------------------------------------------------------ interpolation
def interpolate_p1(space: LagrangeSpace, fn, zero_constrained: bool = False) -> np.ndarray:
    """Nodal interpolant coefficients of a scalar function ``fn(points) -> values``."""
    values = np.asarray(fn(space.mesh.vertices), dtype=float).reshape(space.dof_count)
    values = values.copy()
    if zero_constrained:
        values[space.constrained_dofs] = 0.0
    return values


def interpolate_rt0(space: RTSpace, fn, npts: int = 3) -> np.ndarray:
    """RT interpolant coefficients: normal fluxes of ``fn`` across every edge.

    Edge integrals use ``npts``-point Gauss-Legendre quadrature.
    """
    m = space.mesh
    t, w = gauss_legendre_01(npts)
    a = m.vertices[m.edges[:, 0]]
    b = m.vertices[m.edges[:, 1]]
    pts = a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(fn(pts), dtype=float)
    flux = np.einsum("eqx,ex->eq", vals, m.edge_normals)
    return (flux @ w) * m.edge_lengths
