"""Tests for the equilibration module."""

import numpy as np
import pytest

from stresseq.diagnostics import momentum_and_symmetry_audit
from stresseq.equilibration import (
    ELEMENT_TESTS,
    SIDE_TESTS,
    EquilibrationData,
    Equilibrator,
    LocalStressSpace,
    assemble_reconstruction,
    build_local_system,
    check_compatibility,
    element_tests,
    numerical_infsup_check,
    side_tests,
    solve_minimum_norm,
)
from stresseq.femspace import TaylorHoodSpace
from stresseq.hyperelastic import DisplacementPressureField, MaterialParams
from stresseq.models import BoundaryLabel, ErrorCode, LocalSolveError, PatchKind, ProjectionMode, SpaceVariant
from stresseq.projection import Projection, project_all


@pytest.fixture(scope="module")
def compatible_data(solved2, patches2):
    return EquilibrationData(solved2, project_all(solved2, patches2, ProjectionMode.COMPATIBLE))


@pytest.fixture(scope="module")
def naive_data(solved2, patches2):
    return EquilibrationData(solved2, project_all(solved2, patches2, ProjectionMode.NAIVE))


def _interior(patches):
    return [p for p in patches if p.kind is PatchKind.INTERIOR]


def test_modified_tests_contain_rigid_modes():
    x = np.array([[0.1, 0.2], [0.3, 0.1]])
    u = np.array([[0.01, 0.02], [0.0, -0.01]])
    z = element_tests(SpaceVariant.MODIFIED, x, u, np.array([0.2, 0.2]))
    assert z.shape == (2, ELEMENT_TESTS, 2)
    assert z[:, 2] == pytest.approx(np.column_stack([x[:, 1] + u[:, 1], -(x[:, 0] + u[:, 0])]))
    zeta = side_tests(SpaceVariant.STANDARD, x, u, np.array([0.0, 1.0]))
    assert zeta.shape == (2, SIDE_TESTS, 2)
    assert zeta[:, 2, 0] == pytest.approx([-1.0, 1.0])


def test_local_space_drops_closed_sides(mesh2, patches2):
    for patch in patches2:
        space = LocalStressSpace.build(mesh2, patch)
        assert space.size == 16 * len(patch.elements) - 4 * len(patch.closed_sides)
        x = np.arange(space.size, dtype=float)
        expanded = space.expand(x)
        assert expanded.shape == (len(patch.elements), 2, 8)
        assert np.count_nonzero(expanded) == space.size - 1  # x[0] = 0


def test_system_shape(compatible_data, patches2):
    patch = patches2[0]
    system = build_local_system(patch, compatible_data)
    rows = ELEMENT_TESTS * len(patch.elements) + SIDE_TESTS * len(patch.sides) + len(patch.vertices)
    assert system.C.shape == (rows, system.space.size)
    assert system.M.shape == (system.space.size, system.space.size)
    assert system.predicted_nullity == (3 if patch.kind is PatchKind.INTERIOR else 0)


def test_predicted_vectors_annihilate_operator(compatible_data, patches2):
    for patch in _interior(patches2):
        system = build_local_system(patch, compatible_data, SpaceVariant.MODIFIED)
        scale = np.abs(system.C).max()
        for v in system.predicted:
            assert np.abs(system.C.T @ v).max() <= 1e-10 * scale * np.abs(v).max()


def test_compatible_right_hand_sides(compatible_data, patches2):
    for patch in patches2:
        system = build_local_system(patch, compatible_data)
        assert check_compatibility(system) <= 1e-9


def test_naive_right_hand_sides_are_incompatible(naive_data, patches2):
    values = [check_compatibility(build_local_system(p, naive_data)) for p in _interior(patches2)]
    assert max(values) >= 1e-6


def test_minimum_norm_solution(compatible_data, patches2):
    patch = _interior(patches2)[0]
    system = build_local_system(patch, compatible_data)
    solution = solve_minimum_norm(system)
    assert solution.nullity == 3
    assert solution.residual <= 1e-10 * (1.0 + np.linalg.norm(system.b))
    assert system.C @ solution.x == pytest.approx(system.b, abs=1e-10)
    # M-orthogonal to the kernel of C
    kernel = np.linalg.svd(system.C)[2][solution.rank :]
    assert kernel @ system.M @ solution.x == pytest.approx(np.zeros(kernel.shape[0]), abs=1e-10)


def test_incompatible_rhs_rejected_in_strict_mode(naive_data, patches2):
    systems = [build_local_system(p, naive_data) for p in _interior(patches2)]
    worst = max(systems, key=check_compatibility)
    with pytest.raises(LocalSolveError) as exc:
        solve_minimum_norm(worst, strict=True)
    assert exc.value.code is ErrorCode.INCOMPATIBLE_RHS
    relaxed = solve_minimum_norm(worst, strict=False)
    assert relaxed.incompatibility > 1e-9


def test_infsup_constant_is_positive(compatible_data, patches2):
    system = build_local_system(_interior(patches2)[0], compatible_data)
    assert numerical_infsup_check(system) > 1e-6


def test_reconstruction_is_equilibrated(reconstruction2, solved2):
    assert reconstruction2.max_incompatibility <= 1e-9
    audit = momentum_and_symmetry_audit(
        reconstruction2.stress, reconstruction2.projection, solved2, reconstruction2.variant
    )
    assert audit.violations(1e-9) == []


def test_reconstruction_of_reference_state_is_zero(mesh2, patches2):
    fld = DisplacementPressureField.zero(TaylorHoodSpace(mesh2), MaterialParams())
    reconstruction = Equilibrator(fld, patches2, strict=True).run()
    assert not np.any(reconstruction.stress.coeffs)


def test_naive_mode_strict_fails(solved2, patches2):
    with pytest.raises(LocalSolveError, match="INCOMPATIBLE_RHS"):
        Equilibrator(solved2, patches2, mode=ProjectionMode.NAIVE, strict=True).run()


def test_naive_mode_relaxed_reports_incompatibility(solved2, patches2):
    reconstruction = Equilibrator(solved2, patches2, mode=ProjectionMode.NAIVE, strict=False).run()
    assert reconstruction.max_incompatibility >= 1e-6


def test_assemble_without_corrections_returns_projection(reconstruction2):
    assert assemble_reconstruction([], reconstruction2.p_hat).coeffs == pytest.approx(reconstruction2.p_hat.coeffs)


def _polynomial_data(mesh):
    """Nonsymmetric linear stress, constant load and constant traction."""
    x, y = np.moveaxis(mesh.vertices[mesh.triangles], -1, 0)
    stress = np.stack([np.stack([1 + x, 2 * y], -1), np.stack([x - y, 3 + 0.5 * x], -1)], axis=-2)
    load = np.tile([0.3, -0.1], (mesh.num_elems, 6, 1))
    traction = {int(e): np.tile([0.1, 0.2], (3, 1)) for e in mesh.edges_on(BoundaryLabel.NEUMANN)}
    return Projection(ProjectionMode.COMPATIBLE, stress, load, traction)


def test_undeformed_patch_matches_linear_equilibration(mesh2, patches2):
    fld = DisplacementPressureField.zero(TaylorHoodSpace(mesh2), MaterialParams())
    data = EquilibrationData(fld, _polynomial_data(mesh2))
    patch = next(p for p in patches2 if p.kind is PatchKind.DIRICHLET)
    linear = build_local_system(patch, data, SpaceVariant.STANDARD)
    modified = build_local_system(patch, data, SpaceVariant.MODIFIED)
    assert np.linalg.norm(linear.b) > 0
    # symmetry rows reduce to the skew part of the stress itself
    assert modified.C[linear.num_element_rows + linear.num_side_rows :] == pytest.approx(
        linear.C[linear.num_element_rows + linear.num_side_rows :], abs=1e-14
    )

    expected = solve_minimum_norm(linear).x
    n, m = linear.M.shape[0], linear.num_rows
    kkt = np.block([[linear.M, linear.C.T], [linear.C, np.zeros((m, m))]])
    direct = np.linalg.solve(kkt, np.concatenate([np.zeros(n), linear.b]))[:n]
    scale = max(1.0, np.abs(expected).max())
    assert direct == pytest.approx(expected, abs=1e-9 * scale)
    assert solve_minimum_norm(modified).x == pytest.approx(expected, abs=1e-10 * scale)
