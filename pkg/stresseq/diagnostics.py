"""Surface-traction functionals, dual boundary norms and equilibration audits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from stresseq.equilibration import element_tests, side_tests
from stresseq.femspace import BrokenRTStress, QuadratureRule, TaylorHoodSpace, p2_gradients, p2_interval, p2_reference
from stresseq.hyperelastic import DisplacementPressureField, boundary_traction, piola_stress_pressure
from stresseq.mesh import Mesh
from stresseq.models import AuditReport, BoundaryLabel, BoundarySide, DualNorm, EdgeSide, SpaceVariant
from stresseq.projection import LoadFunction, Projection, rigid_modes

log = logging.getLogger(__name__)


def resultant_traction(stress: BrokenRTStress, part: BoundaryLabel | BoundarySide) -> np.ndarray:
    """Integral of P.n over a boundary part (outward normal)."""
    mesh = stress.mesh
    edges = mesh.edges_on(part)
    total = np.zeros(2)
    for e in edges:
        total += mesh.lengths[e] * stress.edge_moments(int(e))[:, 0]
    return total


def resultant_normal_traction(stress: BrokenRTStress) -> float:
    """Integral of n.(P n) over the Dirichlet boundary."""
    mesh = stress.mesh
    value = 0.0
    for e in mesh.edges_on(BoundaryLabel.DIRICHLET):
        value += mesh.lengths[e] * float(mesh.normals[e] @ stress.edge_moments(int(e))[:, 0])
    return value


def dirichlet_chain(mesh: Mesh) -> list[tuple[int, bool]]:
    """Dirichlet edges in walking order as (edge, reversed), starting at the lowest-index end."""
    edges = [int(e) for e in mesh.edges_on(BoundaryLabel.DIRICHLET)]
    incident: dict[int, list[int]] = {}
    for e in edges:
        for v in mesh.edges[e]:
            incident.setdefault(int(v), []).append(e)
    ends = sorted(v for v, es in incident.items() if len(es) == 1)
    current = ends[0] if ends else int(mesh.edges[edges[0], 0])
    chain, seen = [], set()
    while len(chain) < len(edges):
        e = next(e for e in incident[current] if e not in seen)
        seen.add(e)
        lo, hi = mesh.edges[e]
        chain.append((e, int(lo) != current))
        current = int(hi) if int(lo) == current else int(lo)
    return chain


@dataclass
class TractionProfile:
    """Piecewise affine n.(P n) along the Dirichlet boundary.

    ``arclength`` and ``values`` are (n_edges, 2): start and end of each edge in walking order.
    """

    edges: np.ndarray
    arclength: np.ndarray
    values: np.ndarray

    def integrate(self) -> float:
        lengths = self.arclength[:, 1] - self.arclength[:, 0]
        return float(np.sum(0.5 * lengths * self.values.sum(axis=1)))

    def rows(self) -> list[tuple[float, float]]:
        return [(float(a), float(v)) for a_pair, v_pair in zip(self.arclength, self.values) for a, v in zip(a_pair, v_pair)]


def _profile(mesh: Mesh, normal_traction) -> TractionProfile:
    chain = dirichlet_chain(mesh)
    start = 0.0
    edges, arclength, values = [], [], []
    for e, flipped in chain:
        ends = normal_traction(e, np.array([0.0, 1.0]))
        if flipped:
            ends = ends[::-1]
        edges.append(e)
        arclength.append([start, start + mesh.lengths[e]])
        values.append(ends)
        start += mesh.lengths[e]
    return TractionProfile(np.array(edges), np.array(arclength), np.array(values))


def traction_profile(stress: BrokenRTStress) -> TractionProfile:
    mesh = stress.mesh
    return _profile(mesh, lambda e, s: stress.trace_values(e, s) @ mesh.normals[e])


def raw_traction_profile(fld: DisplacementPressureField) -> TractionProfile:
    """Profile of the unprojected P(u_h, p_h), sampled at the edge endpoints."""
    mesh = fld.mesh

    def normal_traction(e, s):
        t = int(mesh.edge_to_elem[e, 0])
        stress = fld.stress_at(t, mesh.edge_barycentric(t, e, s))
        n = mesh.normals[e]
        return np.einsum("r,src,c->s", n, stress, n)

    return _profile(mesh, normal_traction)


@dataclass
class BoundaryFunctional:
    """Vector traction sampled at Gauss points of a set of boundary edges (weights include |S|)."""

    mesh: Mesh
    edges: np.ndarray
    points: np.ndarray  # interval points in [0, 1]
    weights: np.ndarray  # (n_edges, ns)
    values: np.ndarray  # (n_edges, ns, 2)

    def __sub__(self, other: BoundaryFunctional) -> BoundaryFunctional:
        return BoundaryFunctional(self.mesh, self.edges, self.points, self.weights, self.values - other.values)

    def __mul__(self, scalar: float) -> BoundaryFunctional:
        return BoundaryFunctional(self.mesh, self.edges, self.points, self.weights, scalar * self.values)

    __rmul__ = __mul__

    def integrate(self) -> np.ndarray:
        return np.einsum("es,esc->c", self.weights, self.values)

    @classmethod
    def _sample(cls, mesh: Mesh, order: int, evaluate) -> BoundaryFunctional:
        rule = QuadratureRule.interval(order)
        edges = mesh.edges_on(BoundaryLabel.DIRICHLET)
        values = np.array([evaluate(int(e), rule.points) for e in edges])
        weights = mesh.lengths[edges][:, None] * rule.weights[None, :]
        return cls(mesh, edges, rule.points, weights, values)

    @classmethod
    def from_stress(cls, stress: BrokenRTStress, order: int = 8) -> BoundaryFunctional:
        return cls._sample(stress.mesh, order, lambda e, s: stress.trace_values(e, s))

    @classmethod
    def from_field(cls, fld: DisplacementPressureField, order: int = 8) -> BoundaryFunctional:
        mesh = fld.mesh

        def evaluate(e, s):
            t = int(mesh.edge_to_elem[e, 0])
            return fld.stress_at(t, mesh.edge_barycentric(t, e, s)) @ mesh.normals[e]

        return cls._sample(mesh, order, evaluate)

    @classmethod
    def from_coarse_stress(cls, coarse: BrokenRTStress, fine: Mesh, order: int = 8) -> BoundaryFunctional:
        """Trace of a stress on the parent mesh, sampled on the fine boundary edges."""
        coarse_mesh = coarse.mesh

        def evaluate(e, s):
            parent = int(fine.parent_edge[e])
            x = _edge_points(fine, e, s)
            return coarse.trace_values(parent, _edge_parameter(coarse_mesh, parent, x))

        return cls._sample(fine, order, evaluate)

    @classmethod
    def from_coarse_field(cls, coarse: DisplacementPressureField, fine: Mesh, order: int = 8) -> BoundaryFunctional:
        coarse_mesh = coarse.mesh

        def evaluate(e, s):
            parent = int(fine.parent_edge[e])
            t = int(coarse_mesh.edge_to_elem[parent, 0])
            bary = coarse_mesh.edge_barycentric(t, parent, _edge_parameter(coarse_mesh, parent, _edge_points(fine, e, s)))
            return coarse.stress_at(t, bary) @ coarse_mesh.normals[parent]

        return cls._sample(fine, order, evaluate)


def _edge_points(mesh: Mesh, e: int, s: np.ndarray) -> np.ndarray:
    lo, hi = mesh.vertices[mesh.edges[e]]
    return lo + s[:, None] * (hi - lo)


def _edge_parameter(mesh: Mesh, e: int, x: np.ndarray) -> np.ndarray:
    lo, hi = mesh.vertices[mesh.edges[e]]
    return (x - lo) @ (hi - lo) / mesh.lengths[e] ** 2


def _h1_matrix(space: TaylorHoodSpace, order: int = 4) -> sp.csr_matrix:
    """Scalar P2 stiffness plus mass on the Taylor-Hood node numbering."""
    mesh = space.mesh
    rule = QuadratureRule.triangle(order)
    w = rule.physical_weights(mesh)
    values, _ = p2_reference(rule.points)
    grads = p2_gradients(mesh, rule.points)
    ke = np.einsum("tq,tqad,tqbd->tab", w, grads, grads) + np.einsum("tq,qa,qb->tab", w, values, values)
    nodes = space.elem_nodes
    rows = np.repeat(nodes, 6, axis=1).ravel()
    cols = np.tile(nodes, (1, 6)).ravel()
    n = space.num_nodes
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _p1_stiffness(mesh: Mesh) -> sp.csr_matrix:
    ke = mesh.areas[:, None, None] * np.einsum("tad,tbd->tab", mesh.grad_bary, mesh.grad_bary)
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.num_vertices
    return sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _full_lift(functional: BoundaryFunctional, space: TaylorHoodSpace | None) -> float:
    space = space or TaylorHoodSpace(functional.mesh)
    loads = np.zeros((space.num_nodes, 2))
    N = p2_interval(functional.points)
    for k, e in enumerate(functional.edges):
        nodes = list(space.edge_nodes(int(e)))
        loads[nodes] += np.einsum("s,sa,sc->ac", functional.weights[k], N, functional.values[k])
    if not np.any(loads):
        return 0.0
    lifted = spla.splu(_h1_matrix(space).tocsc()).solve(loads)
    return math.sqrt(max(float(np.sum(loads * lifted)), 0.0))


def _neumann_zero_lift(functional: BoundaryFunctional) -> float:
    mesh = functional.mesh
    loads = np.zeros((mesh.num_vertices, 2))
    s = functional.points
    hats = np.column_stack([1.0 - s, s])
    for k, e in enumerate(functional.edges):
        loads[mesh.edges[int(e)]] += np.einsum("s,sa,sc->ac", functional.weights[k], hats, functional.values[k])
    free = np.flatnonzero(~mesh.vertices_on(BoundaryLabel.NEUMANN))
    loads = loads[free]
    if not np.any(loads):
        return 0.0
    stiffness = _p1_stiffness(mesh)[free][:, free]
    lifted = spla.splu(stiffness.tocsc()).solve(loads)
    return math.sqrt(max(float(np.sum(loads * lifted)), 0.0))


def hminus_half_norm(
    functional: BoundaryFunctional,
    space: TaylorHoodSpace | None = None,
    norm: DualNorm = DualNorm.FULL,
) -> float:
    """Dual norm of a boundary traction s through its Riesz lift w, returned as sqrt(<s, w>).

    FULL lifts into the P2 space with (grad w, grad v) + (w, v) = <s, v> per component.
    NEUMANN_ZERO takes the sup over P1 functions vanishing on Gamma_N against |grad v|,
    so <s, 1> does not enter and the singular corners carry no test-function weight.
    """
    if norm is DualNorm.NEUMANN_ZERO:
        return _neumann_zero_lift(functional)
    return _full_lift(functional, space)


def convergence_rates(errors: list[float]) -> list[float]:
    """Rates log2(e_{L-1} / e_L) between consecutive refinement levels."""
    rates = []
    for coarse, fine in zip(errors, errors[1:]):
        rates.append(math.log2(coarse / fine) if coarse > 0 and fine > 0 else math.nan)
    return rates


# --- audits -----------------------------------------------------------------


def rigid_mode_balance(
    stress: BrokenRTStress,
    fld: DisplacementPressureField,
    load: LoadFunction | None = None,
    quad_degree: int = 8,
) -> np.ndarray:
    """Rigid-mode balance of the reconstructed traction on the clamped edge.

    For each rho in RM(u_h) (the two translations, then the rotation
    (y + u_2, -(x + u_1))) returns

        <P_h^R n, rho>_{Gamma_D} - [(P(u_h, p_h), grad rho) - <g, rho>_{Gamma_N} - (f, rho)].

    The bracket is what the divergence theorem gives for <P n, rho>_{Gamma_D} of an
    exact stress, with P(u_h, p_h) standing in for P in the volume term; since
    grad rho = J(1) F(u_h) that term only sees the skew part of P F^T. The result is
    therefore the computable form of -<(P - P_h^R) n, rho>_{Gamma_D}. The projected
    stress P_hat never enters.
    """
    mesh = fld.mesh
    rule = QuadratureRule.triangle(quad_degree)
    edge_rule = QuadratureRule.interval(quad_degree)
    s = edge_rule.points
    w = rule.physical_weights(mesh)
    u, grad_u, p = fld.at_points(rule.points)
    x = np.einsum("qk,tkc->tqc", rule.points, mesh.vertices[mesh.triangles])
    F = np.eye(2) + grad_u
    P = piola_stress_pressure(F, p, fld.params)
    # grad rho_3 = J(1) F
    skew = np.einsum("tqc,tqc->tq", P[..., 0, :], F[..., 1, :]) - np.einsum("tqc,tqc->tq", P[..., 1, :], F[..., 0, :])
    reaction = np.array([0.0, 0.0, float(np.sum(w * skew))])
    if load is not None:
        f = np.asarray(load(x.reshape(-1, 2))).reshape(x.shape)
        reaction -= np.einsum("tq,tqc,tqjc->j", w, f, rigid_modes(x, u))

    traction = np.zeros(3)
    for e in mesh.boundary_edges():
        e = int(e)
        t = int(mesh.edge_to_elem[e, 0])
        bary = mesh.edge_barycentric(t, e, s)
        u_e, _, _ = fld.at(t, bary)
        rho = rigid_modes(mesh.to_physical(t, bary), u_e)
        ws = mesh.lengths[e] * edge_rule.weights
        label = mesh.label(e)
        if label is BoundaryLabel.DIRICHLET:
            traction += np.einsum("s,sc,sjc->j", ws, stress.trace_values(e, s), rho)
        else:
            reaction -= np.einsum("s,c,sjc->j", ws, boundary_traction(mesh, e, fld.gamma), rho)
    return traction - reaction


def momentum_and_symmetry_audit(
    stress: BrokenRTStress,
    projection: Projection,
    fld: DisplacementPressureField,
    variant: SpaceVariant = SpaceVariant.MODIFIED,
    quad_degree: int = 8,
    load: LoadFunction | None = None,
) -> AuditReport:
    """Largest residual of each equilibration condition of the reconstructed stress."""
    mesh = fld.mesh
    rule = QuadratureRule.triangle(quad_degree)
    edge_rule = QuadratureRule.interval(quad_degree)
    s = edge_rule.points
    w = rule.physical_weights(mesh)
    u, grad_u, _ = fld.at_points(rule.points)
    x = np.einsum("qk,tkc->tqc", rule.points, mesh.vertices[mesh.triangles])
    F = np.eye(2) + grad_u
    values, divs = stress.tabulate(rule)
    n2, _ = p2_reference(rule.points)
    f_hat = np.einsum("qa,tac->tqc", n2, projection.load_nodal)

    divergence = 0.0
    for t in range(mesh.num_elems):
        z = element_tests(variant, x[t], u[t], mesh.elem_center[t])
        moments = np.einsum("q,qr,qlr->l", w[t], divs[t] + f_hat[t], z)
        divergence = max(divergence, float(np.abs(moments).max()))

    jump = neumann = 0.0
    for e in range(mesh.num_edges):
        t = int(mesh.edge_to_elem[e, 0])
        bary = mesh.edge_barycentric(t, e, s)
        u_e, _, _ = fld.at(t, bary)
        zeta = side_tests(variant, mesh.to_physical(t, bary), u_e, s)
        ws = mesh.lengths[e] * edge_rule.weights
        label = mesh.label(e)
        if label is None:
            diff = stress.trace_values(e, s) - stress.trace_values(e, s, EdgeSide.PLUS)
            jump = max(jump, float(np.abs(np.einsum("s,sr,slr->l", ws, diff, zeta)).max()))
        elif label is BoundaryLabel.NEUMANN:
            diff = stress.trace_values(e, s) - projection.traction_at(e, s)
            neumann = max(neumann, float(np.abs(np.einsum("s,sr,slr->l", ws, diff, zeta)).max()))

    expected = np.zeros(2)
    for e in mesh.edges_on(BoundaryLabel.NEUMANN):
        expected += mesh.lengths[e] * boundary_traction(mesh, int(e), fld.gamma)
    neumann_resultant = float(np.linalg.norm(resultant_traction(stress, BoundaryLabel.NEUMANN) - expected))

    skew = np.einsum("tqc,tqc->tq", values[..., 0, :], F[..., 1, :]) - np.einsum(
        "tqc,tqc->tq", values[..., 1, :], F[..., 0, :]
    )
    per_vertex = np.zeros(mesh.num_vertices)
    np.add.at(per_vertex, mesh.triangles, np.einsum("tq,tq,qk->tk", w, skew, rule.points))
    symmetry = float(np.abs(per_vertex).max())

    rigid = float(np.abs(rigid_mode_balance(stress, fld, load, quad_degree)).max())
    scale = 1.0 + stress.l2_norm()
    report = AuditReport(
        divergence=divergence,
        jump=jump,
        neumann=neumann,
        neumann_resultant=neumann_resultant,
        symmetry=symmetry,
        rigid_balance=rigid,
        scale=scale,
    )
    log.debug("Audit: %s (scale %.3g)", report.families(), scale)
    return report
