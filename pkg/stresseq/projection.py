"""Element-wise projections of load, stress and traction onto piecewise polynomials.

The compatible variants keep the moments against the rigid body modes of the current
configuration, localized by the patch partition of unity, so that the vertex-patch
problems have consistent right-hand sides.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from stresseq.femspace import BrokenRTSpace, BrokenRTStress, QuadratureRule, p2_interval, p2_reference
from stresseq.hyperelastic import DisplacementPressureField, boundary_traction
from stresseq.mesh import Mesh, VertexPatch, edge_hats, element_hats
from stresseq.models import BoundaryLabel, ErrorCode, ProjectionError, ProjectionMode

log = logging.getLogger(__name__)

LoadFunction = Callable[[np.ndarray], np.ndarray]

P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0  # times |T|
P2_INTERVAL_MASS = np.array([[4.0, 2.0, -1.0], [2.0, 16.0, 2.0], [-1.0, 2.0, 4.0]]) / 30.0  # times |S|


def rigid_modes(points: np.ndarray, u: np.ndarray) -> np.ndarray:
    """(n, 3, 2) values of (1,0), (0,1) and the rotation (y + u_2, -(x + u_1))."""
    points = np.atleast_2d(points)
    u = np.atleast_2d(u)
    modes = np.zeros(points.shape[:-1] + (3, 2))
    modes[..., 0, 0] = 1.0
    modes[..., 1, 1] = 1.0
    modes[..., 2, 0] = points[..., 1] + u[..., 1]
    modes[..., 2, 1] = -(points[..., 0] + u[..., 0])
    return modes


def rigid_mode_gradients(F: np.ndarray) -> np.ndarray:
    """(..., 3, 2, 2) gradients; the rotation's gradient is J(1) F."""
    grads = np.zeros(F.shape[:-2] + (3, 2, 2))
    grads[..., 2, 0, :] = F[..., 1, :]
    grads[..., 2, 1, :] = -F[..., 0, :]
    return grads


def rotation_multiplier() -> np.ndarray:
    """theta per mode with J(theta) F = grad rho."""
    return np.array([0.0, 0.0, 1.0])


def constrained_least_squares(
    mass: np.ndarray,
    moments: np.ndarray,
    constraints: np.ndarray,
    rhs: np.ndarray,
    expected_rank: int | None = None,
    rank_tol: float = 1e-10,
) -> tuple[np.ndarray, int]:
    """Minimize x'Mx - 2 m'x subject to Ax = r by the null-space method.

    The constraint rank is revealed by an SVD with threshold ``rank_tol * s_max``; the
    component of r outside range(A) is discarded. Returns (x, rank).
    """
    if constraints.shape[0] == 0:
        return sla.solve(mass, moments, assume_a="pos"), 0
    U, s, Vt = sla.svd(constraints)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    if expected_rank is not None and rank < expected_rank:
        raise ProjectionError(
            ErrorCode.RANK_DEFICIENT_CONSTRAINTS,
            f"constraint rank {rank} below expected {expected_rank}",
            {"rank": rank, "expected": expected_rank, "singular_values": s.tolist()},
        )
    particular = Vt[:rank].T @ ((U[:, :rank].T @ rhs) / s[:rank])
    nullspace = Vt[rank:].T
    if nullspace.shape[1] == 0:
        return particular, rank
    reduced = nullspace.T @ mass @ nullspace
    y = sla.solve(reduced, nullspace.T @ (moments - mass @ particular), assume_a="pos")
    return particular + nullspace @ y, rank


@dataclass
class ProjectedStress:
    """P1 tensor on one element as vertex values (3, 2, 2)."""

    element: int
    nodal: np.ndarray
    rank: int = 0


@dataclass
class ProjectedLoad:
    """P2 vector on one element as nodal values (6, 2) in TaylorHoodSpace order."""

    element: int
    nodal: np.ndarray
    rank: int = 0


class _ElementData:
    """Quadrature data of one element shared by the projections."""

    def __init__(self, fld: DisplacementPressureField, t: int, rule: QuadratureRule, load: LoadFunction | None):
        mesh = fld.mesh
        self.t = t
        self.rule = rule
        self.bary = rule.points
        self.w = 2.0 * mesh.areas[t] * rule.weights
        self.x = mesh.to_physical(t, self.bary)
        self.u, grad_u, p = fld.at(t, self.bary)
        self.stress = fld.stress_at(t, self.bary)
        self.F = np.eye(2) + grad_u
        self.N, dN = p2_reference(self.bary)
        self.gradN = dN @ mesh.grad_bary[t]  # (nq, 6, 2)
        space = fld.space
        nodes = space.elem_nodes[t]
        self.node_x = space.node_coords[nodes]
        self.node_u = fld.u.reshape(-1, 2)[nodes]
        self.grad_bary = mesh.grad_bary[t]
        self.load = np.zeros_like(self.x) if load is None else np.asarray(load(self.x), dtype=float)

    def hat_at_nodes(self, hat: np.ndarray) -> np.ndarray:
        """Hat function values at the 6 P2 nodes from its vertex values."""
        mids = 0.5 * np.array([hat[1] + hat[2], hat[2] + hat[0], hat[0] + hat[1]])
        return np.concatenate([hat, mids])

    def localized_modes(self, hat: np.ndarray) -> np.ndarray:
        """Nodal values (3 modes, 6 nodes, 2) of the P2 interpolant of phi_z * rho."""
        modes = rigid_modes(self.node_x, self.node_u)  # (6, 3, 2)
        return np.einsum("a,ajc->jac", self.hat_at_nodes(hat), modes)


def naive_project_stress(fld: DisplacementPressureField, element: int, rule: QuadratureRule | None = None) -> ProjectedStress:
    """Component-wise L2 projection of P(u_h, p_h) onto P1(T)."""
    rule = rule or QuadratureRule.triangle(8)
    mesh = fld.mesh
    bary = rule.points
    w = 2.0 * mesh.areas[element] * rule.weights
    stress = fld.stress_at(element, bary)
    moments = np.einsum("q,qk,qrc->krc", w, bary, stress)
    nodal = np.linalg.solve(mesh.areas[element] * P1_MASS, moments.reshape(3, 4)).reshape(3, 2, 2)
    return ProjectedStress(element, nodal)


def naive_project_load(
    fld: DisplacementPressureField, element: int, load: LoadFunction | None = None, rule: QuadratureRule | None = None
) -> ProjectedLoad:
    data = _ElementData(fld, element, rule or QuadratureRule.triangle(8), load)
    mass = np.einsum("q,qa,qb->ab", data.w, data.N, data.N)
    moments = np.einsum("q,qa,qc->ac", data.w, data.N, data.load)
    return ProjectedLoad(element, np.linalg.solve(mass, moments))


def _load_system(data: _ElementData, hats: list[np.ndarray]):
    mass6 = np.einsum("q,qa,qb->ab", data.w, data.N, data.N)
    mass = np.kron(mass6, np.eye(2))
    moments = np.einsum("q,qa,qc->ac", data.w, data.N, data.load).reshape(-1)
    rows, rhs = [], []
    rho = rigid_modes(data.x, data.u)  # (nq, 3, 2)
    for hat in hats:
        phi = data.bary @ hat
        wz = data.localized_modes(hat)  # (3, 6, 2)
        wz_q = np.einsum("qa,jac->qjc", data.N, wz)
        for j in range(3):
            rows.append(np.einsum("q,qa,qc->ac", data.w * phi, data.N, rho[:, j]).reshape(-1))
            rhs.append(np.einsum("q,qc,qc->", data.w, data.load, wz_q[:, j]))
    return mass, moments, np.array(rows).reshape(-1, 12), np.array(rhs)


def compatible_project_load(
    fld: DisplacementPressureField,
    element: int,
    hats: list[np.ndarray],
    load: LoadFunction | None = None,
    rule: QuadratureRule | None = None,
    rank_tol: float = 1e-10,
) -> ProjectedLoad:
    """Closest P2(T)^2 load whose moments against phi_z * rho match those of f against I(phi_z * rho).

    ``hats`` holds the vertex values on T of every patch function nonzero on T.
    """
    data = _ElementData(fld, element, rule or QuadratureRule.triangle(8), load)
    mass, moments, rows, rhs = _load_system(data, hats)
    x, rank = constrained_least_squares(mass, moments, rows, rhs, 3 * len(hats), rank_tol)
    return ProjectedLoad(element, x.reshape(6, 2), rank)


def _stress_system(data: _ElementData, area: float, hats: list[np.ndarray]):
    mass = np.kron(area * P1_MASS, np.eye(4))
    moments = np.einsum("q,qk,qrc->krc", data.w, data.bary, data.stress).reshape(-1)
    rows, rhs = [], []
    rho = rigid_modes(data.x, data.u)
    for hat in hats:
        grad_phi = hat @ data.grad_bary
        wz = data.localized_modes(hat)
        grad_wz = np.einsum("jar,qac->qjrc", wz, data.gradN)
        for j in range(3):
            rows.append(np.einsum("q,qk,qr,c->krc", data.w, data.bary, rho[:, j], grad_phi).reshape(-1))
            rhs.append(np.einsum("q,qrc,qrc->", data.w, data.stress, grad_wz[:, j]))
    return mass, moments, np.array(rows).reshape(-1, 12), np.array(rhs)


def compatible_project_stress(
    fld: DisplacementPressureField,
    element: int,
    hats: list[np.ndarray],
    rule: QuadratureRule | None = None,
    rank_tol: float = 1e-10,
) -> ProjectedStress:
    """Closest P1(T) tensor with (P_hat, rho x grad phi_z)_T = (P, grad I(phi_z * rho))_T.

    Summed over the patches covering T the conditions are trivial, so the rank is
    three times one less than the number of patches.
    """
    data = _ElementData(fld, element, rule or QuadratureRule.triangle(8), None)
    # a single covering patch has a constant hat on T and no conditions
    mass, moments, rows, rhs = _stress_system(data, fld.mesh.areas[element], hats if len(hats) > 1 else [])
    x, rank = constrained_least_squares(mass, moments, rows, rhs, 3 * (len(hats) - 1), rank_tol)
    return ProjectedStress(element, x.reshape(3, 2, 2), rank)


def compatible_project_traction(
    fld: DisplacementPressureField,
    edge: int,
    hats: list[np.ndarray],
    rule_order: int = 8,
    rank_tol: float = 1e-10,
) -> np.ndarray:
    """Closest P2(S)^2 traction to g with <g_hat, phi_z rho>_S = <g, I(phi_z rho)>_S.

    Returns the values at the (lower vertex, midpoint, higher vertex) of the edge.
    """
    mesh = fld.mesh
    space = fld.space
    rule = QuadratureRule.interval(rule_order)
    s, ws = rule.points, mesh.lengths[edge] * rule.weights
    g = boundary_traction(mesh, edge, fld.gamma)
    N = p2_interval(s)
    nodes = np.array(space.edge_nodes(edge))
    node_x = space.node_coords[nodes]
    node_u = fld.u.reshape(-1, 2)[nodes]
    x_s = N @ node_x
    u_s = N @ node_u
    rho = rigid_modes(x_s, u_s)
    node_rho = rigid_modes(node_x, node_u)

    mass = np.kron(mesh.lengths[edge] * P2_INTERVAL_MASS, np.eye(2))
    moments = np.einsum("s,sa,c->ac", ws, N, g).reshape(-1)
    rows, rhs = [], []
    for hat in hats:
        phi = hat[0] * (1 - s) + hat[1] * s
        phi_nodes = np.array([hat[0], 0.5 * (hat[0] + hat[1]), hat[1]])
        wz_s = np.einsum("sa,a,ajc->sjc", N, phi_nodes, node_rho)
        for j in range(3):
            rows.append(np.einsum("s,sa,sc->ac", ws * phi, N, rho[:, j]).reshape(-1))
            rhs.append(np.einsum("s,c,sc->", ws, g, wz_s[:, j]))
    x, _ = constrained_least_squares(
        mass, moments, np.array(rows).reshape(-1, 6), np.array(rhs), 3 * len(hats), rank_tol
    )
    return x.reshape(3, 2)


@dataclass
class Projection:
    """Projected data for the whole mesh."""

    mode: ProjectionMode
    stress_nodal: np.ndarray  # (nt, 3, 2, 2)
    load_nodal: np.ndarray  # (nt, 6, 2)
    traction_nodal: dict[int, np.ndarray] = field(default_factory=dict)  # Neumann edge -> (3, 2)

    def stress(self, rt_space: BrokenRTSpace) -> BrokenRTStress:
        return rt_space.interpolate_p1(self.stress_nodal)

    def stress_at(self, element: int, bary: np.ndarray) -> np.ndarray:
        return np.einsum("qk,krc->qrc", np.atleast_2d(bary), self.stress_nodal[element])

    def load_at(self, element: int, bary: np.ndarray) -> np.ndarray:
        values, _ = p2_reference(bary)
        return values @ self.load_nodal[element]

    def traction_at(self, edge: int, s: np.ndarray) -> np.ndarray:
        return p2_interval(s) @ self.traction_nodal[edge]


def zero_projection(mesh: Mesh, mode: ProjectionMode = ProjectionMode.NAIVE) -> Projection:
    return Projection(mode, np.zeros((mesh.num_elems, 3, 2, 2)), np.zeros((mesh.num_elems, 6, 2)))


def project_all(
    fld: DisplacementPressureField,
    patches: list[VertexPatch],
    mode: ProjectionMode = ProjectionMode.COMPATIBLE,
    load: LoadFunction | None = None,
    quad_degree: int = 8,
    rank_tol: float = 1e-10,
) -> Projection:
    mesh = fld.mesh
    rule = QuadratureRule.triangle(quad_degree)
    stress = np.zeros((mesh.num_elems, 3, 2, 2))
    loads = np.zeros((mesh.num_elems, 6, 2))
    tractions: dict[int, np.ndarray] = {}
    if mode is ProjectionMode.COMPATIBLE:
        per_element = element_hats(mesh, patches)
        for t in range(mesh.num_elems):
            hats = [hat for _, hat in per_element[t]]
            stress[t] = compatible_project_stress(fld, t, hats, rule, rank_tol).nodal
            loads[t] = compatible_project_load(fld, t, hats, load, rule, rank_tol).nodal
        for e, covering in edge_hats(mesh, patches).items():
            if mesh.label(e) is BoundaryLabel.NEUMANN:
                tractions[e] = compatible_project_traction(
                    fld, e, [hat for _, hat in covering], quad_degree, rank_tol
                )
    else:
        for t in range(mesh.num_elems):
            stress[t] = naive_project_stress(fld, t, rule).nodal
            loads[t] = naive_project_load(fld, t, load, rule).nodal
        for e in mesh.edges_on(BoundaryLabel.NEUMANN):
            tractions[int(e)] = np.tile(boundary_traction(mesh, int(e), fld.gamma), (3, 1))
    log.debug("Projected stress and load on %d elements (%s)", mesh.num_elems, mode.value)
    return Projection(mode, stress, loads, tractions)
