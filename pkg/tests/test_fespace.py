import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fosls.assembly import element_data
from fosls.fespace import (
    DiscreteField,
    LagrangeSpace,
    RTSpace,
    eval_p1_basis,
    eval_rt0_basis,
    interpolate_p1,
    interpolate_rt0,
)
from fosls.mesh import EdgeTag, generate_lshape, generate_unit_square
from fosls.quadrature import gauss_legendre_01, quad_rule

REF = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def edge_flux(coords, values_fn, a, b):
    """Normal flux of a vector function across segment a->b (normal = tangent turned clockwise)."""
    t, w = gauss_legendre_01(3)
    pts = a + t[:, None] * (b - a)
    tangent = b - a
    normal = np.array([tangent[1], -tangent[0]])
    return float(w @ (values_fn(pts) @ normal))


def test_p1_nodal_values():
    values, grads = eval_p1_basis(np.array([[0.0, 0.0], [1 / 3, 1 / 3]]))
    np.testing.assert_allclose(values[0], [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(values[1], [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(grads, [[-1, -1], [1, 0], [0, 1]], atol=1e-15)


@pytest.mark.parametrize("degree", range(1, 7))
def test_partition_of_unity(degree):
    values, _ = eval_p1_basis(quad_rule(degree).points)
    np.testing.assert_allclose(values.sum(axis=1), 1.0, atol=1e-15)


def test_rt0_reference_divergence():
    _, div = eval_rt0_basis(REF[None], quad_rule(1).points)
    np.testing.assert_allclose(np.abs(div), 2.0, atol=1e-14)


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_rt0_divergence_and_fluxes(flat):
    coords = np.array(flat).reshape(3, 2)
    area = 0.5 * ((coords[1, 0] - coords[0, 0]) * (coords[2, 1] - coords[0, 1])
                  - (coords[1, 1] - coords[0, 1]) * (coords[2, 0] - coords[0, 0]))
    if abs(area) < 1e-2:
        return
    if area < 0:
        coords = coords[[0, 2, 1]]
        area = -area
    signs = np.array([1, -1, 1])
    _, div = eval_rt0_basis(coords[None], quad_rule(1).points, signs[None])
    np.testing.assert_allclose(div[0], signs / area, rtol=1e-10)
    # flux of basis i across local edge j (opposite vertex j, from j+1 to j+2) is s_i delta_ij
    for i in range(3):
        def phi(p, i=i):
            lam = np.linalg.solve(np.column_stack([coords[1] - coords[0], coords[2] - coords[0]]), (p - coords[0]).T).T
            vals, _ = eval_rt0_basis(coords[None], lam, signs[None])
            return vals[0, :, i]

        for j in range(3):
            flux = edge_flux(coords, phi, coords[(j + 1) % 3], coords[(j + 2) % 3])
            assert flux == pytest.approx(signs[i] * (i == j), abs=1e-10)


def test_rt0_degenerate_triangle():
    coords = np.array([[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]])
    with pytest.raises(ValueError):
        eval_rt0_basis(coords, quad_rule(1).points)


def test_normal_continuity(rng):
    mesh = generate_lshape(2)
    rt, p1 = RTSpace(mesh), LagrangeSpace(mesh)
    fld = DiscreteField(rt, p1, rng.standard_normal(rt.dof_count), np.zeros(p1.dof_count))
    interior = np.flatnonzero(mesh.edge_triangles[:, 1] >= 0)
    normals = mesh.edge_normals
    for e in interior:
        mid = mesh.vertices[mesh.edges[e]].mean(axis=0)
        vals = []
        for t in mesh.edge_triangles[e]:
            P = mesh.vertices[mesh.triangles[t]]
            ref = np.linalg.solve(np.column_stack([P[1] - P[0], P[2] - P[0]]), mid - P[0])
            phi, _ = eval_rt0_basis(P[None], ref[None], mesh.edge_signs[t][None])
            vals.append(fld.sigma[mesh.triangle_edges[t]] @ phi[0, 0] @ normals[e])
        assert vals[0] == pytest.approx(vals[1], abs=1e-12)


def test_discrete_field_checks_lengths(spaces4):
    rt, p1 = spaces4
    with pytest.raises(ValueError):
        DiscreteField(rt, p1, np.zeros(rt.dof_count + 1), np.zeros(p1.dof_count))
    other = LagrangeSpace(generate_unit_square(4))
    with pytest.raises(ValueError):
        DiscreteField(rt, other, np.zeros(rt.dof_count), np.zeros(other.dof_count))


def test_space_constraints():
    mesh = generate_unit_square(3, "bottom")
    rt, p1 = RTSpace(mesh), LagrangeSpace(mesh)
    dirichlet_edges = mesh.edges[mesh.edge_tags == EdgeTag.DIRICHLET]
    np.testing.assert_array_equal(p1.constrained_dofs, np.unique(dirichlet_edges))
    np.testing.assert_array_equal(rt.constrained_dofs, np.flatnonzero(mesh.edge_tags == EdgeTag.NEUMANN))
    assert p1.dof_count == mesh.n_vertices and rt.dof_count == mesh.n_edges


def grad_error_sq(mesh, fn, grad_fn, coef):
    ed = element_data(mesh, 6)
    g = np.einsum("tix,ti->tx", ed.grad, coef[mesh.triangles])
    diff = grad_fn(ed.pts) - g[:, None, :]
    return float(np.einsum("tq,tqx,tqx->", ed.w, diff, diff))


def test_p1_interpolation_zero_and_affine(spaces4):
    _, p1 = spaces4
    assert not interpolate_p1(p1, lambda p: np.zeros(p.shape[:-1])).any()
    coef = interpolate_p1(p1, lambda p: 2 * p[..., 0] - 3 * p[..., 1] + 0.5)
    err = grad_error_sq(p1.mesh, None, lambda p: np.broadcast_to([2.0, -3.0], p.shape), coef)
    assert np.sqrt(err) <= 1e-12
    zeroed = interpolate_p1(p1, lambda p: 1.0 + p[..., 0], zero_constrained=True)
    assert not zeroed[p1.constrained_dofs].any()


def test_p1_interpolation_rate():
    def u(p):
        return np.sin(np.pi * p[..., 0]) * np.sin(np.pi * p[..., 1])

    def grad(p):
        x, y = p[..., 0], p[..., 1]
        return np.pi * np.stack([np.cos(np.pi * x) * np.sin(np.pi * y), np.sin(np.pi * x) * np.cos(np.pi * y)], -1)

    errs = []
    for n in (8, 16, 32):
        mesh = generate_unit_square(n)
        errs.append(np.sqrt(grad_error_sq(mesh, u, grad, interpolate_p1(LagrangeSpace(mesh), u))))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    np.testing.assert_allclose(rates, 1.0, atol=0.05)


def test_rt_interpolation_zero_and_constant(spaces4):
    rt, p1 = spaces4
    assert not interpolate_rt0(rt, lambda p: np.zeros(p.shape)).any()
    const = np.array([0.7, -1.3])
    fld = DiscreteField(rt, p1, interpolate_rt0(rt, lambda p: np.broadcast_to(const, p.shape)), np.zeros(p1.dof_count))
    vals = fld.sigma_at(quad_rule(4).points)
    assert np.abs(vals - const).max() <= 1e-12


def test_rt_interpolation_rotation_field(spaces4):
    rt, p1 = spaces4
    coef = interpolate_rt0(rt, lambda p: np.stack([p[..., 1], -p[..., 0]], -1))
    fld = DiscreteField(rt, p1, coef, np.zeros(p1.dof_count))
    assert np.abs(fld.div_sigma()).max() <= 1e-12


@given(st.integers(0, 2**32 - 1))
def test_commuting_property(seed):
    # polynomial fields of degree <= 5 have exact 3-point Gauss edge fluxes
    rng = np.random.default_rng(seed)
    mesh = generate_unit_square(3)
    rt, p1 = RTSpace(mesh), LagrangeSpace(mesh)
    powers = [(a, b) for a in range(4) for b in range(4 - a)]
    cx, cy = rng.standard_normal((2, len(powers)))

    def f(p):
        x, y = p[..., 0], p[..., 1]
        return np.stack([sum(c * x**a * y**b for c, (a, b) in zip(cx, powers)),
                         sum(c * x**a * y**b for c, (a, b) in zip(cy, powers))], -1)

    def div_f(p):
        x, y = p[..., 0], p[..., 1]
        dx = sum(c * a * x ** max(a - 1, 0) * y**b for c, (a, b) in zip(cx, powers))
        dy = sum(c * b * x**a * y ** max(b - 1, 0) for c, (a, b) in zip(cy, powers))
        return dx + dy

    fld = DiscreteField(rt, p1, interpolate_rt0(rt, f), np.zeros(p1.dof_count))
    ed = element_data(mesh, 6)
    mean_div = np.einsum("tq,tq->t", ed.w, div_f(ed.pts)) / mesh.areas
    err = np.sqrt(mesh.areas @ (fld.div_sigma() - mean_div) ** 2)
    size = np.sqrt(np.einsum("tq,tqx,tqx->", ed.w, f(ed.pts), f(ed.pts)))
    assert err <= 1e-10 * size
