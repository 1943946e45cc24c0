"""Tests for the hyperelastic module."""

import math

import numpy as np
import pytest

from stresseq.femspace import QuadratureRule, TaylorHoodSpace
from stresseq.hyperelastic import (
    DisplacementPressureField,
    KinematicState,
    MaterialParams,
    assemble_system,
    energy_nh,
    neumann_load,
    piola_stress,
    piola_stress_pressure,
    solve_newton,
)
from stresseq.models import ErrorCode, SolverError

F_SAMPLE = np.array([[1.1, 0.2], [-0.05, 0.95]])


def test_material_params_validation():
    with pytest.raises(ValueError, match="mu"):
        MaterialParams(mu=0.0)
    with pytest.raises(ValueError, match="lambda"):
        MaterialParams(lam=-1.0)
    assert MaterialParams().incompressible
    assert MaterialParams(lam=4.0).inv_lam == 0.25


def test_kinematics():
    state = KinematicState.from_gradient(F_SAMPLE - np.eye(2))
    assert state.det == pytest.approx(np.linalg.det(F_SAMPLE))
    assert state.B == pytest.approx(F_SAMPLE @ F_SAMPLE.T)
    assert state.inv == pytest.approx(np.linalg.inv(F_SAMPLE))


def test_reference_configuration_is_stress_free():
    params = MaterialParams()
    assert piola_stress_pressure(np.eye(2), 0.0, params) == pytest.approx(np.zeros((2, 2)))
    assert piola_stress(np.eye(2), MaterialParams(lam=10.0)) == pytest.approx(np.zeros((2, 2)))


def test_stress_is_energy_derivative():
    params = MaterialParams(mu=1.3, lam=7.0)
    h = 1e-6
    numeric = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            dF = np.zeros((2, 2))
            dF[i, j] = h
            plus = energy_nh((F_SAMPLE + dF) @ (F_SAMPLE + dF).T, params)
            minus = energy_nh((F_SAMPLE - dF) @ (F_SAMPLE - dF).T, params)
            numeric[i, j] = (plus - minus) / (2 * h)
    assert piola_stress(F_SAMPLE, params) == pytest.approx(numeric, rel=1e-6)


def test_small_strain_limit_is_linear_elasticity():
    params = MaterialParams(mu=1.0, lam=10.0)
    H0 = 1e-2 * np.array([[0.3, -0.2], [0.1, 0.25]])
    errors = []
    for scale in (1.0, 0.5, 0.25):
        H = scale * H0
        linear = params.mu * (H + H.T) + params.lam * np.trace(H) * np.eye(2)
        errors.append(np.linalg.norm(piola_stress(np.eye(2) + H, params) - linear))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.05)
    assert errors[1] / errors[2] == pytest.approx(4.0, rel=0.05)


def test_pressure_form_matches_displacement_form():
    params = MaterialParams(mu=1.0, lam=25.0)
    p = params.lam * (np.linalg.det(F_SAMPLE) - 1.0)
    assert piola_stress_pressure(F_SAMPLE, p, params) == pytest.approx(piola_stress(F_SAMPLE, params))


def test_incompressible_energy_rejected():
    with pytest.raises(ValueError, match="finite lambda"):
        energy_nh(np.eye(2), MaterialParams())


def test_inverted_element_rejected():
    F = np.array([[-1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(SolverError) as exc:
        piola_stress_pressure(F, 0.0, MaterialParams())
    assert exc.value.code is ErrorCode.NONPOSITIVE_DET


def test_neumann_load_resultant(mesh2):
    space = TaylorHoodSpace(mesh2)
    load = neumann_load(space, 0.2)
    assert load[0 : space.num_u : 2].sum() == pytest.approx(0.0)
    assert load[1 : space.num_u : 2].sum() == pytest.approx(0.2 * 0.16)


def test_tangent_matches_finite_differences(mesh1):
    params = MaterialParams(mu=1.0, lam=10.0)
    space = TaylorHoodSpace(mesh1)
    rng = np.random.default_rng(0)
    # smooth bending that vanishes on the clamped edge x = 0
    u = space.interpolate(lambda x: 0.05 * np.column_stack([np.sin(np.pi * x[:, 0]) * x[:, 1], x[:, 0] * x[:, 1]]))
    fld = DisplacementPressureField(space, u, 0.1 * rng.standard_normal(space.num_p), params)
    assert fld.min_det(QuadratureRule.triangle(8)) > 0.5
    direction = rng.standard_normal(space.num_dofs)
    _, tangent = assemble_system(fld, params, 0.1)
    h = 1e-6
    x = fld.as_vector()
    r_plus, _ = assemble_system(fld.with_vector(x + h * direction), params, 0.1)
    r_minus, _ = assemble_system(fld.with_vector(x - h * direction), params, 0.1)
    numeric = (r_plus - r_minus) / (2 * h)
    assert tangent @ direction == pytest.approx(numeric, rel=1e-5, abs=1e-8)


def test_zero_load_gives_zero_field(mesh1):
    fld = solve_newton(mesh1, MaterialParams(), 0.0)
    assert not np.any(fld.u)
    assert not np.any(fld.p)
    assert fld.history.load_steps == [0.0]


def test_solution_satisfies_equations(solved2):
    residual, _ = assemble_system(solved2, solved2.params, solved2.gamma)
    free = solved2.space.free_dofs
    assert np.max(np.abs(residual[free])) < 1e-9
    assert not np.any(solved2.u[solved2.space.dirichlet_dofs])
    assert solved2.history.load_steps[-1] == pytest.approx(0.2)
    assert solved2.history.final_residual < 1e-9


def test_membrane_bends_upward(mesh2, solved2):
    tip = int(np.flatnonzero(np.all(np.isclose(mesh2.vertices, [0.48, 0.6]), axis=1))[0])
    assert solved2.vertex_displacements()[tip, 1] > 0
    assert solved2.min_det(QuadratureRule.triangle(8)) > 0


def test_incompressibility_holds_weakly(solved2):
    _, grad_u, _ = solved2.at_points(QuadratureRule.triangle(8).points)
    det = np.linalg.det(np.eye(2) + grad_u)
    w = QuadratureRule.triangle(8).physical_weights(solved2.mesh)
    # the P1 pressure tests include the constant
    assert abs(np.sum(w * (det - 1.0))) < 1e-8


def test_schedule_must_reach_gamma(mesh1):
    with pytest.raises(ValueError, match="schedule"):
        solve_newton(mesh1, MaterialParams(), 0.2, schedule=[0.1, 0.15])


def test_negative_gamma_rejected(mesh1):
    with pytest.raises(ValueError, match="gamma"):
        solve_newton(mesh1, MaterialParams(), -0.1)


def test_divergence_reported(mesh1):
    with pytest.raises(SolverError) as exc:
        solve_newton(mesh1, MaterialParams(), 50.0, schedule=[50.0], max_iter=2, max_bisections=0)
    assert exc.value.code is ErrorCode.NEWTON_DIVERGED
    assert math.isclose(exc.value.detail["load"], 50.0)
