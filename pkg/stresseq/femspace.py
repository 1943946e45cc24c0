"""Quadrature, Taylor-Hood Lagrange bases and the broken Raviart-Thomas stress space."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from stresseq.mesh import Mesh
from stresseq.models import BoundaryLabel, EdgeSide

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class QuadratureRule:
    """Rule on the reference triangle; ``points`` are barycentric, weights sum to 1/2."""

    points: np.ndarray
    weights: np.ndarray
    order: int

    @property
    def reference(self) -> np.ndarray:
        """Points in reference coordinates (xi, eta) = (lambda_1, lambda_2)."""
        return self.points[:, 1:]

    def physical_weights(self, mesh: Mesh) -> np.ndarray:
        """(nt, nq) weights including the element Jacobian."""
        return 2.0 * mesh.areas[:, None] * self.weights[None, :]

    @staticmethod
    def triangle(order: int) -> QuadratureRule:
        return _triangle_rule(order)

    @staticmethod
    def interval(order: int) -> IntervalRule:
        return _interval_rule(order)


@dataclass(frozen=True)
class IntervalRule:
    """Gauss-Legendre rule on [0, 1]; weights sum to 1."""

    points: np.ndarray
    weights: np.ndarray
    order: int


@lru_cache(maxsize=None)
def _interval_rule(order: int) -> IntervalRule:
    n = max(1, math.ceil((order + 1) / 2))
    x, w = np.polynomial.legendre.leggauss(n)
    return IntervalRule(points=0.5 * (x + 1.0), weights=0.5 * w, order=order)


@lru_cache(maxsize=None)
def _triangle_rule(order: int) -> QuadratureRule:
    # Collapsed (Duffy) tensor Gauss rule: one extra degree from the (1 - a) Jacobian.
    n = max(1, math.ceil((order + 2) / 2))
    x, w = np.polynomial.legendre.leggauss(n)
    a, wa = 0.5 * (x + 1.0), 0.5 * w
    aa, bb = np.meshgrid(a, a, indexing="ij")
    wwa, wwb = np.meshgrid(wa, wa, indexing="ij")
    xi = aa.ravel()
    eta = (bb * (1.0 - aa)).ravel()
    weights = (wwa * wwb * (1.0 - aa)).ravel()
    points = np.column_stack([1.0 - xi - eta, xi, eta])
    return QuadratureRule(points=points, weights=weights, order=order)


# --- P2 / P1 Lagrange -------------------------------------------------------


def p2_reference(bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """P2 shape functions and their derivatives with respect to barycentric coordinates.

    Ordering: the three vertex functions, then the midpoint functions of local edges 0, 1, 2
    (edge i opposite vertex i). Returns values (nq, 6) and d/dlambda (nq, 6, 3).
    """
    bary = np.atleast_2d(bary)
    l0, l1, l2 = bary.T
    values = np.column_stack(
        [l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1), 4 * l1 * l2, 4 * l2 * l0, 4 * l0 * l1]
    )
    dvals = np.zeros((bary.shape[0], 6, 3))
    for i in range(3):
        dvals[:, i, i] = 4 * bary[:, i] - 1
    dvals[:, 3, 1], dvals[:, 3, 2] = 4 * l2, 4 * l1
    dvals[:, 4, 2], dvals[:, 4, 0] = 4 * l0, 4 * l2
    dvals[:, 5, 0], dvals[:, 5, 1] = 4 * l1, 4 * l0
    return values, dvals


def eval_p2_basis(mesh: Mesh, element: int, point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (6,) and physical gradients (6, 2) of the P2 shape functions at a physical point."""
    bary = mesh.barycentric(element, point)
    values, dvals = p2_reference(bary)
    return values[0], dvals[0] @ mesh.grad_bary[element]


def p2_gradients(mesh: Mesh, bary: np.ndarray) -> np.ndarray:
    """(nt, nq, 6, 2) physical gradients at barycentric points shared by all elements."""
    _, dvals = p2_reference(bary)
    return np.einsum("qak,tkd->tqad", dvals, mesh.grad_bary)


def skew_j(theta: np.ndarray | float) -> np.ndarray:
    """J(theta) = [[0, theta], [-theta, 0]], broadcast over the shape of theta."""
    theta = np.asarray(theta, dtype=float)
    out = np.zeros(theta.shape + (2, 2))
    out[..., 0, 1] = theta
    out[..., 1, 0] = -theta
    return out


class TaylorHoodSpace:
    """Continuous vector P2 displacements with continuous scalar P1 pressures.

    Nodes 0..nv-1 are the mesh vertices, node nv + e the midpoint of edge e. Displacement
    dof ``2 * node + component``; pressure dofs follow all displacement dofs.
    """

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        nv = mesh.num_vertices
        self.num_nodes = nv + mesh.num_edges
        self.num_u = 2 * self.num_nodes
        self.num_p = nv
        self.num_dofs = self.num_u + self.num_p
        self.elem_nodes = np.hstack([mesh.triangles, nv + mesh.elem_to_edge])
        midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
        self.node_coords = np.vstack([mesh.vertices, midpoints])

        u_dofs = 2 * self.elem_nodes[:, :, None] + np.arange(2)[None, None, :]
        self.elem_u_dofs = u_dofs.reshape(mesh.num_elems, 12)
        self.elem_p_dofs = self.num_u + mesh.triangles
        self.elem_dofs = np.hstack([self.elem_u_dofs, self.elem_p_dofs])

        fixed = np.zeros(self.num_nodes, dtype=bool)
        dirichlet = mesh.edges_on(BoundaryLabel.DIRICHLET)
        fixed[mesh.edges[dirichlet].ravel()] = True
        fixed[nv + dirichlet] = True
        self.dirichlet_nodes = np.flatnonzero(fixed)
        is_fixed = np.zeros(self.num_dofs, dtype=bool)
        is_fixed[2 * self.dirichlet_nodes] = True
        is_fixed[2 * self.dirichlet_nodes + 1] = True
        self.dirichlet_dofs = np.flatnonzero(is_fixed)
        self.free_dofs = np.flatnonzero(~is_fixed)

    def __repr__(self) -> str:
        return f"TaylorHoodSpace(u={self.num_u}, p={self.num_p}, fixed={len(self.dirichlet_dofs)})"

    def edge_nodes(self, e: int) -> tuple[int, int, int]:
        """(lower vertex, midpoint, higher vertex) nodes of edge e."""
        lo, hi = self.mesh.edges[e]
        return int(lo), self.mesh.num_vertices + e, int(hi)

    def interpolate(self, func) -> np.ndarray:
        """Nodal interpolant of a vector function ``func(points (n, 2)) -> (n, 2)``."""
        return np.asarray(func(self.node_coords), dtype=float).reshape(-1)


def p2_interval(s: np.ndarray) -> np.ndarray:
    """1D quadratic Lagrange functions on [0, 1] for nodes (0, 1/2, 1); shape (ns, 3)."""
    s = np.asarray(s, dtype=float)
    return np.column_stack([(1 - s) * (1 - 2 * s), 4 * s * (1 - s), s * (2 * s - 1)])


# --- broken Raviart-Thomas --------------------------------------------------


def _rt_reference(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Monomial basis of RT1 on the reference triangle: values (..., 8, 2), divergences (..., 8)."""
    x, y = xi[..., 0], xi[..., 1]
    one, zero = np.ones_like(x), np.zeros_like(x)
    values = np.stack(
        [
            np.stack([one, zero], -1),
            np.stack([x, zero], -1),
            np.stack([y, zero], -1),
            np.stack([zero, one], -1),
            np.stack([zero, x], -1),
            np.stack([zero, y], -1),
            np.stack([x * x, x * y], -1),
            np.stack([x * y, y * y], -1),
        ],
        axis=-2,
    )
    divs = np.stack([zero, one, zero, zero, zero, one, 3 * x, 3 * y], axis=-1)
    return values, divs


# Normal trace of the edge-moment basis functions along their edge, in s.
def moment_trace(s: np.ndarray) -> np.ndarray:
    """(ns, 2): traces of the constant-moment and linear-moment basis functions."""
    s = np.asarray(s, dtype=float)
    return np.column_stack([np.ones_like(s), 3.0 * (2.0 * s - 1.0)])


class BrokenRTSpace:
    """Element-wise RT1 for each stress row, through the contravariant Piola map.

    Per element and row there are 8 dofs: for local edge i, the moments
    (1/|S|) int_S q.n_S psi_k ds with psi_0 = 1, psi_1 = 2s - 1 (dof 2i + k, global edge
    normal, s from the lower to the higher vertex index); then the two components of the
    element mean (dofs 6, 7).
    """

    def __init__(self, mesh: Mesh, quad_degree: int = 4):
        self.mesh = mesh
        self.quad_degree = quad_degree
        nt = mesh.num_elems
        self.detj = 2.0 * mesh.areas

        edge_rule = QuadratureRule.interval(quad_degree)
        s, ws = edge_rule.points, edge_rule.weights
        psi = np.column_stack([np.ones_like(s), 2 * s - 1])
        bary = self._edge_points(s)  # (nt, 3, ns, 3)
        q_edge, _ = self._monomials(bary[..., 1:])  # (nt, 3, ns, 8, 2)
        normals = mesh.normals[mesh.elem_to_edge]  # (nt, 3, 2)
        qn = np.einsum("tisjc,tic->tisj", q_edge, normals)
        vmat = np.zeros((nt, 8, 8))
        vmat[:, 0:6:2] = np.einsum("tisj,s->tij", qn, ws * psi[:, 0])
        vmat[:, 1:6:2] = np.einsum("tisj,s->tij", qn, ws * psi[:, 1])

        rule = QuadratureRule.triangle(quad_degree)
        q_int, _ = self._monomials(np.broadcast_to(rule.reference, (nt,) + rule.reference.shape))
        vmat[:, 6:8] = 2.0 * np.einsum("tqjc,q->tcj", q_int, rule.weights)
        self.dual = np.linalg.inv(vmat)  # basis_i = sum_j dual[j, i] monomial_j
        self._tables: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._mass: np.ndarray | None = None

    def __repr__(self) -> str:
        return f"BrokenRTSpace(elements={self.mesh.num_elems}, dofs={16 * self.mesh.num_elems})"

    def _edge_points(self, s: np.ndarray) -> np.ndarray:
        tri = self.mesh.triangles
        nt, ns = tri.shape[0], len(s)
        bary = np.zeros((nt, 3, ns, 3))
        for i in range(3):
            a, b = (i + 1) % 3, (i + 2) % 3
            a_is_lo = tri[:, a] < tri[:, b]
            lam_a = np.where(a_is_lo[:, None], 1.0 - s[None, :], s[None, :])
            bary[:, i, :, a] = lam_a
            bary[:, i, :, b] = 1.0 - lam_a
        return bary

    def _monomials(self, xi: np.ndarray, elements: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Piola-mapped monomials; xi has a leading element axis."""
        jac = self.mesh.jacobians if elements is None else self.mesh.jacobians[elements]
        det = self.detj if elements is None else self.detj[elements]
        ref, ref_div = _rt_reference(xi)
        extra = ref.ndim - 3
        shape = (-1,) + (1,) * extra
        values = np.einsum("tcd,t...jd->t...jc", jac, ref) / det.reshape(shape + (1, 1))
        divs = ref_div / det.reshape(shape + (1,))
        return values, divs

    def basis_at(self, element: int, bary: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Basis values (nq, 8, 2) and divergences (nq, 8) of one element."""
        xi = np.atleast_2d(bary)[None, :, 1:]
        values, divs = self._monomials(xi, np.array([element]))
        dual = self.dual[element]
        return np.einsum("qjc,ji->qic", values[0], dual), divs[0] @ dual

    def tabulate(self, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
        """Basis values (nt, nq, 8, 2) and divergences (nt, nq, 8) at the rule's points."""
        if rule.order not in self._tables:
            nt = self.mesh.num_elems
            xi = np.broadcast_to(rule.reference, (nt,) + rule.reference.shape)
            values, divs = self._monomials(xi)
            self._tables[rule.order] = (
                np.einsum("tqjc,tji->tqic", values, self.dual),
                np.einsum("tqj,tji->tqi", divs, self.dual),
            )
        return self._tables[rule.order]

    def element_mass(self) -> np.ndarray:
        """(nt, 8, 8) L2 Gram matrices of the basis of one stress row."""
        if self._mass is None:
            rule = QuadratureRule.triangle(self.quad_degree)
            values, _ = self.tabulate(rule)
            w = rule.physical_weights(self.mesh)
            self._mass = np.einsum("tq,tqic,tqjc->tij", w, values, values)
        return self._mass

    def interpolate(self, tensor_at) -> BrokenRTStress:
        """Apply the dofs to ``tensor_at(bary (nt, nq, 3)) -> (nt, nq, 2, 2)``.

        Fields in P1(T) per row are reproduced exactly.
        """
        mesh = self.mesh
        nt = mesh.num_elems
        coeffs = np.zeros((nt, 2, 8))
        edge_rule = QuadratureRule.interval(self.quad_degree)
        s, ws = edge_rule.points, edge_rule.weights
        bary = self._edge_points(s)
        values = tensor_at(bary.reshape(nt, -1, 3)).reshape(nt, 3, len(s), 2, 2)
        normals = mesh.normals[mesh.elem_to_edge]
        pn = np.einsum("tisrc,tic->tisr", values, normals)
        coeffs[:, :, 0:6:2] = np.einsum("tisr,s->tri", pn, ws)
        coeffs[:, :, 1:6:2] = np.einsum("tisr,s->tri", pn, ws * (2 * s - 1))
        rule = QuadratureRule.triangle(self.quad_degree)
        inner = tensor_at(np.broadcast_to(rule.points, (nt,) + rule.points.shape))
        coeffs[:, :, 6:8] = 2.0 * np.einsum("tqrc,q->trc", inner, rule.weights)
        return BrokenRTStress(self, coeffs)

    def interpolate_p1(self, nodal: np.ndarray) -> BrokenRTStress:
        """Interpolate element-wise P1 tensors given by vertex values (nt, 3, 2, 2)."""
        return self.interpolate(lambda bary: np.einsum("tqk,tkrc->tqrc", bary, nodal))

    def zero(self) -> BrokenRTStress:
        return BrokenRTStress(self, np.zeros((self.mesh.num_elems, 2, 8)))


def eval_rt_basis(space: BrokenRTSpace, element: int, point: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values (8, 2) and divergences (8,) of one row's RT1 basis at a physical point."""
    bary = space.mesh.barycentric(element, point)
    values, divs = space.basis_at(element, bary)
    return values[0], divs[0]


@dataclass
class BrokenRTStress:
    """Stress tensor with each row in broken RT1; ``coeffs`` has shape (nt, 2, 8)."""

    space: BrokenRTSpace
    coeffs: np.ndarray

    def __add__(self, other: BrokenRTStress) -> BrokenRTStress:
        return BrokenRTStress(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other: BrokenRTStress) -> BrokenRTStress:
        return BrokenRTStress(self.space, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> BrokenRTStress:
        return BrokenRTStress(self.space, scalar * self.coeffs)

    __rmul__ = __mul__

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def evaluate(self, element: int, bary: np.ndarray) -> np.ndarray:
        """(nq, 2, 2) stress at barycentric points of one element."""
        values, _ = self.space.basis_at(element, bary)
        return np.einsum("ri,qic->qrc", self.coeffs[element], values)

    def divergence(self, element: int, bary: np.ndarray) -> np.ndarray:
        """(nq, 2) row-wise divergence."""
        _, divs = self.space.basis_at(element, bary)
        return np.einsum("ri,qi->qr", self.coeffs[element], divs)

    def tabulate(self, rule: QuadratureRule) -> tuple[np.ndarray, np.ndarray]:
        """Stress (nt, nq, 2, 2) and divergence (nt, nq, 2) at every element's rule points."""
        values, divs = self.space.tabulate(rule)
        return (
            np.einsum("tri,tqic->tqrc", self.coeffs, values),
            np.einsum("tri,tqi->tqr", self.coeffs, divs),
        )

    def edge_moments(self, e: int, side: EdgeSide = EdgeSide.MINUS) -> np.ndarray:
        """(2 rows, 2 moments) of P.n_S on edge e seen from the given side."""
        t = self.mesh.edge_to_elem[e, 0 if side is EdgeSide.MINUS else 1]
        if t < 0:
            raise ValueError(f"edge {e} has no triangle on the {side.value} side")
        i = self.mesh.local_edge(t, e)
        return self.coeffs[t, :, 2 * i : 2 * i + 2]

    def jump_moments(self, e: int) -> np.ndarray:
        """Moments of [[P.n]] = P|T-.n - P|T+.n; the one-sided trace on boundary edges."""
        minus = self.edge_moments(e, EdgeSide.MINUS)
        if self.mesh.edge_to_elem[e, 1] < 0:
            return minus.copy()
        return minus - self.edge_moments(e, EdgeSide.PLUS)

    def trace_values(self, e: int, s: np.ndarray, side: EdgeSide = EdgeSide.MINUS) -> np.ndarray:
        """(ns, 2) values of P.n_S along edge e."""
        return moment_trace(s) @ self.edge_moments(e, side).T

    def l2_norm(self, rule: QuadratureRule | None = None) -> float:
        rule = rule or QuadratureRule.triangle(self.space.quad_degree)
        values, _ = self.tabulate(rule)
        w = rule.physical_weights(self.mesh)
        return float(np.sqrt(np.einsum("tq,tqrc,tqrc->", w, values, values)))


def edge_normal_trace(stress: BrokenRTStress, edge: int, side: EdgeSide = EdgeSide.MINUS) -> np.ndarray:
    """P1(S)^2 trace of P.n_S from one side as (row, (a, b)) with P.n = a + b (2s - 1)."""
    moments = stress.edge_moments(edge, side)
    return np.column_stack([moments[:, 0], 3.0 * moments[:, 1]])
