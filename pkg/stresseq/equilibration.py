"""Vertex-patch stress equilibration in the broken Raviart-Thomas space.

Each patch problem looks for the correction of least L2 norm that, together with the
partition-of-unity share of the projected stress, balances the element moments,
closes the normal-trace jumps and satisfies the weak symmetry of P F^T.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from stresseq.femspace import BrokenRTSpace, BrokenRTStress, QuadratureRule, moment_trace, p2_reference
from stresseq.hyperelastic import DisplacementPressureField
from stresseq.mesh import Mesh, VertexPatch, build_patches
from stresseq.models import (
    BoundaryLabel,
    EdgeSide,
    ErrorCode,
    LocalSolveError,
    PatchKind,
    ProjectionMode,
    SpaceVariant,
)
from stresseq.projection import LoadFunction, Projection, project_all, rigid_modes, rotation_multiplier

log = logging.getLogger(__name__)

INCOMPATIBILITY_TOL = 1e-9
ELEMENT_TESTS = 6
SIDE_TESTS = 4


# --- local spaces -----------------------------------------------------------


@dataclass(frozen=True)
class LocalStressSpace:
    """Broken RT1 tensors on a patch with zero normal trace on its closed sides.

    Local dof ``16 k + 8 r + i`` is dof i of row r on the k-th patch element; ``free``
    masks out the edge moments of closed sides.
    """

    patch: VertexPatch
    free: np.ndarray

    @classmethod
    def build(cls, mesh: Mesh, patch: VertexPatch) -> LocalStressSpace:
        free = np.ones((len(patch.elements), 2, 8), dtype=bool)
        closed = set(patch.closed_sides)
        for k, t in enumerate(patch.elements):
            for i, e in enumerate(mesh.elem_to_edge[t]):
                if int(e) in closed:
                    free[k, :, 2 * i : 2 * i + 2] = False
        return cls(patch, free.reshape(-1))

    @property
    def size(self) -> int:
        return int(self.free.sum())

    def index(self, k: int, r: int, i: int) -> int:
        """Position of a local dof among the free ones, or -1 if it is fixed to zero."""
        flat = 16 * k + 8 * r + i
        if not self.free[flat]:
            return -1
        return int(self.free[:flat].sum())

    def expand(self, x: np.ndarray) -> np.ndarray:
        """(n_elements, 2, 8) coefficients from a free-dof vector."""
        full = np.zeros(self.free.shape[0])
        full[self.free] = x
        return full.reshape(-1, 2, 8)


def element_tests(variant: SpaceVariant, x: np.ndarray, u: np.ndarray, centroid: np.ndarray) -> np.ndarray:
    """(nq, 6, 2) element test functions; the first three are rigid modes in the modified variant."""
    xt, yt = (x - centroid).T
    one, zero = np.ones_like(xt), np.zeros_like(xt)
    if variant is SpaceVariant.MODIFIED:
        rot = rigid_modes(x, u)[:, 2]
        cols = [(one, zero), (zero, one), (rot[:, 0], rot[:, 1]), (xt, zero), (zero, yt), (yt, xt)]
    else:
        cols = [(one, zero), (zero, one), (xt, zero), (yt, zero), (zero, xt), (zero, yt)]
    return np.stack([np.stack(c, axis=-1) for c in cols], axis=1)


def side_tests(variant: SpaceVariant, x: np.ndarray, u: np.ndarray, s: np.ndarray) -> np.ndarray:
    """(ns, 4, 2) side test functions along the edge parameter s."""
    one, zero = np.ones_like(s), np.zeros_like(s)
    if variant is SpaceVariant.MODIFIED:
        rot = rigid_modes(x, u)[:, 2]
        pos = x + u
        cols = [(one, zero), (zero, one), (rot[:, 0], rot[:, 1]), (pos[:, 0], pos[:, 1])]
    else:
        lin = 2 * s - 1
        cols = [(one, zero), (zero, one), (lin, zero), (zero, lin)]
    return np.stack([np.stack(c, axis=-1) for c in cols], axis=1)


@dataclass(frozen=True)
class LocalTestSpaces:
    """Element, side and multiplier test spaces of one patch problem."""

    variant: SpaceVariant = SpaceVariant.MODIFIED

    def element(self, x, u, centroid) -> np.ndarray:
        return element_tests(self.variant, x, u, centroid)

    def side(self, x, u, s) -> np.ndarray:
        return side_tests(self.variant, x, u, s)


# --- shared inputs ----------------------------------------------------------


class EquilibrationData:
    """Quadrature tables of the solution, the projections and the RT basis on every element."""

    def __init__(
        self,
        fld: DisplacementPressureField,
        projection: Projection,
        rt_space: BrokenRTSpace | None = None,
        quad_degree: int = 8,
        poly_degree: int = 4,
    ):
        self.fld = fld
        self.mesh = fld.mesh
        self.projection = projection
        self.rt_space = rt_space or BrokenRTSpace(self.mesh, poly_degree)
        self.rule = QuadratureRule.triangle(quad_degree)
        self.edge_rule = QuadratureRule.interval(quad_degree)
        self.p_hat = projection.stress(self.rt_space)

        mesh = self.mesh
        rule = self.rule
        self.w = rule.physical_weights(mesh)
        self.x = np.einsum("qk,tkc->tqc", rule.points, mesh.vertices[mesh.triangles])
        self.u, grad_u, _ = fld.at_points(rule.points)
        self.F = np.eye(2) + grad_u
        self.basis, self.basis_div = self.rt_space.tabulate(rule)
        self.p_hat_values, self.p_hat_div = self.p_hat.tabulate(rule)
        n2, _ = p2_reference(rule.points)
        self.f_hat = np.einsum("qa,tac->tqc", n2, projection.load_nodal)

    def edge_state(self, e: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Points, displacement and weights (including |S|) along edge e."""
        mesh = self.mesh
        s = self.edge_rule.points
        t = int(mesh.edge_to_elem[e, 0])
        bary = mesh.edge_barycentric(t, e, s)
        u, _, _ = self.fld.at(t, bary)
        return mesh.to_physical(t, bary), u, mesh.lengths[e] * self.edge_rule.weights

    def jump_values(self, e: int) -> np.ndarray:
        """(ns, 2) values of [[P_hat n]], with the traction subtracted on Neumann sides."""
        s = self.edge_rule.points
        values = self.p_hat.trace_values(e, s)
        if self.mesh.edge_to_elem[e, 1] >= 0:
            values = values - self.p_hat.trace_values(e, s, EdgeSide.PLUS)
        elif self.mesh.label(e) is BoundaryLabel.NEUMANN:
            values = values - self.projection.traction_at(e, s)
        return values


# --- local system -----------------------------------------------------------


@dataclass
class LocalSystem:
    """Constraints C x = b on the free local dofs and the mass matrix of the objective.

    Rows: 6 per patch element, then 4 per constrained side, then one per patch vertex.
    ``predicted`` holds the rigid-mode vectors of the adjoint null space (rows), empty
    for patches touching the Dirichlet boundary.
    """

    patch: VertexPatch
    space: LocalStressSpace
    variant: SpaceVariant
    C: np.ndarray
    b: np.ndarray
    M: np.ndarray
    multiplier_mass: np.ndarray
    predicted: np.ndarray
    num_element_rows: int
    num_side_rows: int

    @property
    def num_rows(self) -> int:
        return self.C.shape[0]

    @property
    def predicted_nullity(self) -> int:
        return self.predicted.shape[0]


def predicted_null_vectors(
    patch: VertexPatch, data: EquilibrationData, tests: LocalTestSpaces, num_rows: int
) -> np.ndarray:
    """Rigid-mode coordinates (P_T rho, -P_S rho, theta) of the adjoint null space."""
    if patch.kind is PatchKind.DIRICHLET:
        return np.zeros((0, num_rows))
    mesh = data.mesh
    theta = rotation_multiplier()
    vectors = np.zeros((3, num_rows))
    row = 0
    for t in patch.elements:
        z = tests.element(data.x[t], data.u[t], mesh.elem_center[t])
        rho = rigid_modes(data.x[t], data.u[t])
        gram = np.einsum("q,qlc,qmc->lm", data.w[t], z, z)
        moments = np.einsum("q,qlc,qjc->lj", data.w[t], z, rho)
        vectors[:, row : row + ELEMENT_TESTS] = np.linalg.solve(gram, moments).T
        row += ELEMENT_TESTS
    s = data.edge_rule.points
    for e in patch.sides:
        x, u, ws = data.edge_state(e)
        zeta = tests.side(x, u, s)
        rho = rigid_modes(x, u)
        gram = np.einsum("s,slc,smc->lm", ws, zeta, zeta)
        moments = np.einsum("s,slc,sjc->lj", ws, zeta, rho)
        vectors[:, row : row + SIDE_TESTS] = -np.linalg.solve(gram, moments).T
        row += SIDE_TESTS
    vectors[:, row:] = theta[:, None]
    return vectors


def build_local_system(
    patch: VertexPatch,
    data: EquilibrationData,
    variant: SpaceVariant = SpaceVariant.MODIFIED,
) -> LocalSystem:
    mesh = data.mesh
    tests = LocalTestSpaces(variant)
    space = LocalStressSpace.build(mesh, patch)
    n_el = len(patch.elements)
    n_rows = ELEMENT_TESTS * n_el + SIDE_TESTS * len(patch.sides) + len(patch.vertices)
    C = np.zeros((n_rows, 16 * n_el))
    b = np.zeros(n_rows)
    position = {t: k for k, t in enumerate(patch.elements)}
    vertex_row = {v: i for i, v in enumerate(patch.vertices)}
    bary = data.rule.points

    # divergence moments
    for k, t in enumerate(patch.elements):
        w = data.w[t]
        z = tests.element(data.x[t], data.u[t], mesh.elem_center[t])
        phi = bary @ patch.hat_values(mesh, t)
        rows = slice(ELEMENT_TESTS * k, ELEMENT_TESTS * (k + 1))
        block = np.einsum("q,qi,qlr->lri", w, data.basis_div[t], z)
        C[rows, 16 * k : 16 * (k + 1)] = block.reshape(ELEMENT_TESTS, 16)
        source = data.f_hat[t] + data.p_hat_div[t]
        b[rows] = -np.einsum("q,qr,qlr->l", w * phi, source, z)

    # normal-trace jumps
    s = data.edge_rule.points
    trace = moment_trace(s)
    row0 = ELEMENT_TESTS * n_el
    for j, e in enumerate(patch.sides):
        x, u, ws = data.edge_state(e)
        zeta = tests.side(x, u, s)
        rows = slice(row0 + SIDE_TESTS * j, row0 + SIDE_TESTS * (j + 1))
        pairing = np.einsum("s,sm,slr->lrm", ws, trace, zeta)
        for t, sign in zip(mesh.edge_to_elem[e], (1.0, -1.0)):
            if t < 0:
                continue
            k, i = position[int(t)], mesh.local_edge(int(t), e)
            for r in range(2):
                cols = 16 * k + 8 * r + 2 * i
                C[rows, cols : cols + 2] += sign * pairing[:, r, :]
        lo, hi = patch.hat_on_edge(mesh, e)
        phi = lo * (1 - s) + hi * s
        b[rows] = -np.einsum("s,sr,slr->l", ws * phi, data.jump_values(e), zeta)

    # weak symmetry against continuous P1 multipliers
    row0 += SIDE_TESTS * len(patch.sides)
    multiplier_mass = np.zeros((len(patch.vertices), len(patch.vertices)))
    for k, t in enumerate(patch.elements):
        w = data.w[t]
        F = data.F[t]
        phi = bary @ patch.hat_values(mesh, t)
        sym0 = np.einsum("qic,qc->qi", data.basis[t], F[:, 1, :])
        sym1 = -np.einsum("qic,qc->qi", data.basis[t], F[:, 0, :])
        P = data.p_hat_values[t]
        skew = np.einsum("qc,qc->q", P[:, 0], F[:, 1]) - np.einsum("qc,qc->q", P[:, 1], F[:, 0])
        tri = mesh.triangles[t]
        for lv, v in enumerate(tri):
            row = row0 + vertex_row[int(v)]
            lam = bary[:, lv]
            C[row, 16 * k : 16 * k + 8] += np.einsum("q,qi->i", w * lam, sym0)
            C[row, 16 * k + 8 : 16 * (k + 1)] += np.einsum("q,qi->i", w * lam, sym1)
            b[row] -= np.sum(w * phi * lam * skew)
        local = [vertex_row[int(v)] for v in tri]
        multiplier_mass[np.ix_(local, local)] += mesh.areas[t] * (np.ones((3, 3)) + np.eye(3)) / 12.0

    mass = sla.block_diag(*[m for t in patch.elements for m in (data.rt_space.element_mass()[t],) * 2])
    C = C[:, space.free]
    M = mass[np.ix_(space.free, space.free)]
    predicted = predicted_null_vectors(patch, data, tests, n_rows)
    return LocalSystem(
        patch=patch,
        space=space,
        variant=variant,
        C=C,
        b=b,
        M=M,
        multiplier_mass=multiplier_mass,
        predicted=predicted,
        num_element_rows=ELEMENT_TESTS * n_el,
        num_side_rows=SIDE_TESTS * len(patch.sides),
    )


def check_compatibility(system: LocalSystem) -> float:
    """Largest normalized pairing of b with the predicted adjoint null vectors (0 if none)."""
    if system.predicted_nullity == 0:
        return 0.0
    norm_b = np.linalg.norm(system.b)
    if norm_b == 0.0:
        return 0.0
    pairing = np.abs(system.predicted @ system.b) / (norm_b * np.linalg.norm(system.predicted, axis=1))
    return float(pairing.max())


# --- solves -----------------------------------------------------------------


@dataclass
class LocalSolution:
    x: np.ndarray
    rank: int
    nullity: int
    incompatibility: float
    residual: float


def solve_minimum_norm(
    system: LocalSystem,
    *,
    strict: bool = True,
    rank_tol: float = 1e-10,
    check_nullity: bool = True,
) -> LocalSolution:
    """Correction of least L2 norm satisfying the patch constraints.

    The right-hand side is first projected onto range(C); a relative remainder above
    1e-9 is an error in strict mode and a warning otherwise.
    """
    center = system.patch.center
    try:
        L = sla.cholesky(system.M, lower=True)
    except sla.LinAlgError as exc:
        raise LocalSolveError(ErrorCode.SINGULAR_MASS, f"patch {center}: {exc}", {"patch": center}) from exc
    # C L^{-T}
    CL = sla.solve_triangular(L, system.C.T, lower=True).T
    U, s, Vt = sla.svd(CL, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    nullity = system.num_rows - rank

    b = system.b
    coords = U[:, :rank].T @ b
    b_range = U[:, :rank] @ coords
    norm_b = np.linalg.norm(b)
    incompatibility = float(np.linalg.norm(b - b_range) / norm_b) if norm_b > 0 else 0.0
    if incompatibility > INCOMPATIBILITY_TOL:
        if strict:
            raise LocalSolveError(
                ErrorCode.INCOMPATIBLE_RHS,
                f"patch {center}: right-hand side leaves range(C) by {incompatibility:.3e}",
                {"patch": center, "incompatibility": incompatibility},
            )
        log.warning("[patch %d] incompatible right-hand side (%.3e); projecting onto range", center, incompatibility)

    if check_nullity and nullity != system.predicted_nullity:
        raise LocalSolveError(
            ErrorCode.NULLSPACE_MISMATCH,
            f"patch {center}: adjoint null space has dimension {nullity}, expected {system.predicted_nullity}",
            {"patch": center, "nullity": nullity, "expected": system.predicted_nullity},
        )

    y = Vt[:rank].T @ (coords / s[:rank])
    x = sla.solve_triangular(L, y, lower=True, trans="T")
    residual = float(np.linalg.norm(system.C @ x - b_range))
    log.debug("[patch %d] rank %d nullity %d residual %.2e", center, rank, nullity, residual)
    return LocalSolution(x=x, rank=rank, nullity=nullity, incompatibility=incompatibility, residual=residual)


def assemble_reconstruction(
    corrections: list[tuple[LocalStressSpace, np.ndarray]], p_hat: BrokenRTStress
) -> BrokenRTStress:
    """P_hat plus the patch corrections, summed in ascending patch-center order."""
    coeffs = p_hat.coeffs.copy()
    for space, x in sorted(corrections, key=lambda item: item[0].patch.center):
        coeffs[list(space.patch.elements)] += space.expand(x)
    return BrokenRTStress(p_hat.space, coeffs)


def numerical_infsup_check(system: LocalSystem, rank_tol: float = 1e-10) -> float:
    """Smallest nonzero singular value of the weak-symmetry coupling on divergence/jump-free corrections.

    Corrections are M-orthonormal and multipliers are measured in L2(patch).
    """
    n_eq = system.num_element_rows + system.num_side_rows
    kernel = sla.null_space(system.C[:n_eq], rcond=rank_tol)
    if kernel.shape[1] == 0:
        return 0.0
    gram = sla.cholesky(kernel.T @ system.M @ kernel, lower=True)
    kernel_m = sla.solve_triangular(gram, kernel.T, lower=True).T
    coupling = system.C[n_eq:] @ kernel_m
    lx = sla.cholesky(system.multiplier_mass, lower=True)
    s = sla.svd(sla.solve_triangular(lx, coupling, lower=True), compute_uv=False)
    if not s.size or s[0] == 0:
        return 0.0
    return float(s[s > rank_tol * s[0]].min())


# --- driver -----------------------------------------------------------------


@dataclass
class Reconstruction:
    stress: BrokenRTStress
    p_hat: BrokenRTStress
    projection: Projection
    variant: SpaceVariant
    solutions: dict[int, LocalSolution] = field(default_factory=dict)

    @property
    def max_incompatibility(self) -> float:
        return max((sol.incompatibility for sol in self.solutions.values()), default=0.0)

    @property
    def max_residual(self) -> float:
        return max((sol.residual for sol in self.solutions.values()), default=0.0)


class Equilibrator:
    """Projects the solution's stress and load, then solves and sums all patch problems."""

    def __init__(
        self,
        fld: DisplacementPressureField,
        patches: list[VertexPatch] | None = None,
        *,
        mode: ProjectionMode = ProjectionMode.COMPATIBLE,
        variant: SpaceVariant = SpaceVariant.MODIFIED,
        load: LoadFunction | None = None,
        quad_degree: int = 8,
        poly_degree: int = 4,
        rank_tol: float = 1e-10,
        strict: bool = False,
    ):
        self.fld = fld
        self.patches = patches if patches is not None else build_patches(fld.mesh)
        self.mode = mode
        self.variant = variant
        self.load = load
        self.quad_degree = quad_degree
        self.poly_degree = poly_degree
        self.rank_tol = rank_tol
        self.strict = strict

    def prepare(self, projection: Projection | None = None) -> EquilibrationData:
        projection = projection or project_all(
            self.fld, self.patches, self.mode, self.load, self.quad_degree, self.rank_tol
        )
        return EquilibrationData(self.fld, projection, quad_degree=self.quad_degree, poly_degree=self.poly_degree)

    def systems(self, data: EquilibrationData) -> list[LocalSystem]:
        return [build_local_system(patch, data, self.variant) for patch in self.patches]

    def run(self, projection: Projection | None = None) -> Reconstruction:
        data = self.prepare(projection)
        solutions: dict[int, LocalSolution] = {}
        corrections = []
        # the nullity cross-check holds for the rigid-mode test spaces, or without deformation
        check_nullity = self.variant is SpaceVariant.MODIFIED or not np.any(self.fld.u)
        for system in self.systems(data):
            solution = solve_minimum_norm(
                system, strict=self.strict, rank_tol=self.rank_tol, check_nullity=check_nullity
            )
            solutions[system.patch.center] = solution
            corrections.append((system.space, solution.x))
        stress = assemble_reconstruction(corrections, data.p_hat)
        log.info(
            "Equilibrated %d patches (%s projection, %s tests): max incompatibility %.2e",
            len(solutions),
            self.mode.value,
            self.variant.value,
            max((s.incompatibility for s in solutions.values()), default=0.0),
        )
        return Reconstruction(stress, data.p_hat, data.projection, self.variant, solutions)
