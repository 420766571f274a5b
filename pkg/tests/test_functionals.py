import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fosls.adaptivity import estimate
from fosls.assembly import assemble_p1_load, assemble_poisson
from fosls.fespace import DiscreteField, LagrangeSpace, RTSpace, interpolate_rt0
from fosls.functionals import (
    MinusOneContext,
    balance_residual_vector,
    error_triple,
    eval_functional,
    eval_functional_minus1,
    minus_one_norm_sq,
    norm_pair,
    norm_triple,
    poincare_constant,
)
from fosls.harness.experiments import random_field
from fosls.linalg import cholesky_solve
from fosls.lsfem import solve_least_squares
from fosls.mesh import generate_unit_square
from fosls.problems import builtin

ONES = lambda p: np.ones(p.shape[:-1])  # noqa: E731
ZERO = lambda p: np.zeros(p.shape[:-1])  # noqa: E731


def test_zero_field_zero_data(spaces4):
    prob = dataclasses.replace(builtin("poisson_sine"), f1=ZERO, f_physical=ZERO)
    fld = DiscreteField.zeros(*spaces4)
    for f in ("L", "J", "M"):
        br = eval_functional(f, fld, prob)
        assert br.total == 0.0 and br.first_residual_sq == 0.0
    ctx = MinusOneContext(spaces4[1])
    assert eval_functional_minus1("L", fld, prob, ctx).total == 0.0


def test_unit_load_on_zero_field(spaces4):
    prob = dataclasses.replace(builtin("poisson_sine"), f1=ONES)
    br = eval_functional("M", DiscreteField.zeros(*spaces4), prob)
    assert br.first_residual_sq == 0.0
    assert br.second_residual_sq == pytest.approx(1.0, rel=1e-13)


def test_breakdown_total_and_locals(spaces4, rng):
    prob = builtin("convection_reaction")
    fld = random_field(*spaces4, rng)
    for f in ("L", "J", "M"):
        br = eval_functional(f, fld, prob)
        assert br.first_residual_sq >= 0 and br.second_residual_sq >= 0
        assert br.total == br.first_residual_sq + br.second_residual_sq
        assert br.local_first.sum() == pytest.approx(br.first_residual_sq, rel=1e-13)
        assert np.all(br.local_second >= 0)


def test_mismatched_mesh_rejected():
    prob = builtin("poisson_sine")
    mesh = generate_unit_square(2)
    mesh.vertices[:] *= 3.0
    with pytest.raises(ValueError):
        eval_functional("L", DiscreteField.zeros(RTSpace(mesh), LagrangeSpace(mesh)), prob)


@pytest.mark.parametrize("formulation", ["L", "J", "M"])
def test_discrete_solution_is_minimizer(formulation, rng):
    prob = builtin("convection_reaction")
    fld, _, _ = solve_least_squares(formulation, prob, prob.make_mesh(2), tol=1e-12)
    best = eval_functional(formulation, fld, prob).total
    for _ in range(20):
        pert = random_field(fld.rt, fld.p1, rng)
        scale = 10.0 ** rng.uniform(-4, 0)
        trial = DiscreteField(fld.rt, fld.p1, fld.sigma + scale * pert.sigma, fld.u + scale * pert.u)
        assert best <= eval_functional(formulation, trial, prob).total * (1 + 1e-12)


# ------------------------------------------------------------- minus one
def test_minus_one_of_zero(spaces4):
    ctx = MinusOneContext(spaces4[1])
    assert minus_one_norm_sq(np.zeros(spaces4[1].free_dofs.size), ctx) == 0.0
    with pytest.raises(ValueError):
        minus_one_norm_sq(np.zeros(3), ctx)


@pytest.mark.parametrize("n", [4, 8])
def test_minus_one_identity_for_gradients(n, rng):
    p1 = LagrangeSpace(generate_unit_square(n))
    K = assemble_poisson(p1).matrix
    ctx = MinusOneContext(p1)
    for _ in range(20):
        z = rng.standard_normal(K.shape[0])
        r = K @ z  # r(v) = (grad z_h, grad v)
        grad_sq = z @ (K @ z)
        assert minus_one_norm_sq(r, ctx) == pytest.approx(grad_sq, rel=1e-10)


def test_minus_one_of_unit_load_against_dense_oracle():
    p1 = LagrangeSpace(generate_unit_square(4))
    K = assemble_poisson(p1).matrix
    r = assemble_p1_load(p1, scalar=ONES)[p1.free_dofs]
    z = cholesky_solve(K, r)
    expected = z @ (K.toarray() @ z)
    assert minus_one_norm_sq(r, MinusOneContext(p1)) == pytest.approx(expected, rel=1e-10)
    assert expected > 0


@settings(max_examples=15)
@given(st.integers(0, 2**31))
def test_minus_one_is_positive_definite(seed):
    p1 = LagrangeSpace(generate_unit_square(4))
    r = np.random.default_rng(seed).standard_normal(p1.free_dofs.size)
    assert minus_one_norm_sq(r, MinusOneContext(p1)) > 0


def test_minus_one_bounded_by_l2(rng):
    prob = builtin("convection_reaction")
    mesh = prob.make_mesh(2)
    rt, p1 = RTSpace(mesh), LagrangeSpace(mesh)
    ctx = MinusOneContext(p1)
    cp = poincare_constant(p1, tol=1e-10)
    for _ in range(50):
        fld = random_field(rt, p1, rng)
        l2 = eval_functional("L", fld, prob, with_data=False).second_residual_sq
        m1 = eval_functional_minus1("L", fld, prob, ctx, with_data=False).second_residual_sq
        assert np.sqrt(m1) <= cp * np.sqrt(l2) * (1 + 1e-8)


def test_minus_one_of_divergence_bounded_by_flux(rng):
    # with X = 0, f = 0 and v = 0 the balance residual is div tau
    prob = dataclasses.replace(builtin("poisson_sine"), f1=ZERO)
    mesh = prob.make_mesh(2)
    rt, p1 = RTSpace(mesh), LagrangeSpace(mesh)
    ctx = MinusOneContext(p1)
    for _ in range(50):
        fld = random_field(rt, p1, rng)
        fld.u[:] = 0.0
        m1 = minus_one_norm_sq(balance_residual_vector("L", fld, prob), ctx)
        assert np.sqrt(m1) <= norm_pair(fld) * (1 + 1e-12)


def test_minus_one_functionals_need_l_or_j(spaces4):
    ctx = MinusOneContext(spaces4[1])
    with pytest.raises(ValueError):
        eval_functional_minus1("M", DiscreteField.zeros(*spaces4), builtin("poisson_sine"), ctx)


def test_poincare_constant_of_unit_square():
    # the continuous constant is 1 / (sqrt(2) pi); P1 eigenvalues converge from above
    cp = poincare_constant(LagrangeSpace(generate_unit_square(16)))
    exact = 1.0 / (np.sqrt(2.0) * np.pi)
    assert cp < exact and cp == pytest.approx(exact, rel=0.02)


# ------------------------------------------------------------------ norms
def test_norm_examples(spaces4, rng):
    rt, p1 = spaces4
    zero = DiscreteField.zeros(rt, p1)
    assert norm_pair(zero) == 0.0 and norm_triple(zero) == 0.0
    const = DiscreteField(rt, p1, interpolate_rt0(rt, lambda p: np.broadcast_to([1.0, 0.0], p.shape)), np.zeros(p1.dof_count))
    assert norm_pair(const) == pytest.approx(1.0, rel=1e-12)
    assert norm_triple(const) == pytest.approx(1.0, rel=1e-12)
    for _ in range(30):
        fld = random_field(rt, p1, rng)
        assert norm_triple(fld) >= norm_pair(fld)


def test_error_of_interpolant_is_small():
    prob = builtin("poisson_sine")
    errs = []
    for level in (3, 4):
        mesh = prob.make_mesh(level)
        fld, _, _ = solve_least_squares("M", prob, mesh)
        parts = error_triple(fld, prob, "M")
        assert parts.triple == pytest.approx(np.sqrt(parts.local_triple.sum()))
        errs.append(parts.triple)
    assert 0.8 < np.log2(errs[0] / errs[1]) < 1.2


def test_estimator_equals_functional(rng):
    prob = builtin("hminus1_manufactured")
    mesh = prob.make_mesh(2)
    fld = random_field(RTSpace(mesh), LagrangeSpace(mesh), rng)
    est = estimate(fld, prob, "M")
    assert est.eta_global**2 == pytest.approx(eval_functional("M", fld, prob).total, rel=1e-12)
    assert est.eta_global**2 == pytest.approx(np.sum(est.eta_local**2), rel=1e-12)
