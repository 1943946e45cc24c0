"""Triangulations of the reference configuration, refinement and vertex patches."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from stresseq.models import BoundaryLabel, BoundarySide, CookBase, ErrorCode, MeshError, PatchKind

log = logging.getLogger(__name__)

# Local edge i of a triangle is the one opposite local vertex i.
LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])

COOK_CORNERS = np.array([[0.0, 0.0], [0.48, 0.44], [0.48, 0.6], [0.0, 0.44]])


class Mesh:
    """Conforming triangulation with oriented edges and boundary markers.

    Attributes:
        vertices      (nv, 2) coordinates
        triangles     (nt, 3) vertex indices, counterclockwise
        edges         (ne, 2) vertex indices, lower index first
        elem_to_edge  (nt, 3) edge index of local edge i (opposite vertex i)
        edge_to_elem  (ne, 2) adjacent triangles (T-, T+); T+ = -1 on the boundary
        normals       (ne, 2) unit normals pointing from T- into T+ (outward on the boundary)
        edge_side     (ne,)   BoundarySide marker, 0 for interior edges
        parent_elem   (nt,)   triangle of the coarser mesh this one was cut from, or -1
        parent_edge   (ne,)   coarse edge containing this edge, or -1
    """

    def __init__(
        self,
        vertices: np.ndarray,
        triangles: np.ndarray,
        boundary: dict[tuple[int, int], BoundarySide],
        parent_elem: np.ndarray | None = None,
        parent_edges: dict[tuple[int, int], int] | None = None,
    ):
        self.vertices = np.asarray(vertices, dtype=float)
        self.triangles = np.asarray(triangles, dtype=np.int64)
        self.num_vertices = self.vertices.shape[0]
        self.num_elems = self.triangles.shape[0]

        corners = self.vertices[self.triangles]
        d1 = corners[:, 1] - corners[:, 0]
        d2 = corners[:, 2] - corners[:, 0]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(signed <= 0):
            bad = int(np.flatnonzero(signed <= 0)[0])
            raise MeshError(ErrorCode.INVALID_MESH, f"triangle {bad} is not counterclockwise", {"element": bad})
        self.areas = signed
        self.elem_center = corners.mean(axis=1)
        # columns of the affine map from the reference triangle
        self.jacobians = np.stack([d1, d2], axis=-1)
        inv = np.linalg.inv(self.jacobians)
        # gradients of barycentric coordinates, (nt, 3, 2)
        self.grad_bary = np.concatenate([-inv.sum(axis=1)[:, None, :], inv], axis=1)

        local = np.sort(self.triangles[:, LOCAL_EDGES], axis=2).reshape(-1, 2)
        self.edges, inverse = np.unique(local, axis=0, return_inverse=True)
        self.num_edges = self.edges.shape[0]
        self.elem_to_edge = np.asarray(inverse).reshape(self.num_elems, 3)

        lo = self.vertices[self.edges[:, 0]]
        hi = self.vertices[self.edges[:, 1]]
        tangent = hi - lo
        self.lengths = np.linalg.norm(tangent, axis=1)
        normals = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1) / self.lengths[:, None]
        midpoints = 0.5 * (lo + hi)

        edge_to_elem = -np.ones((self.num_edges, 2), dtype=np.int64)
        for t in range(self.num_elems):
            for i in range(3):
                e = self.elem_to_edge[t, i]
                inward = np.dot(normals[e], self.elem_center[t] - midpoints[e]) > 0
                slot = 1 if inward else 0
                if edge_to_elem[e, slot] >= 0:
                    raise MeshError(ErrorCode.INVALID_MESH, f"edge {e} has two triangles on one side")
                edge_to_elem[e, slot] = t
        boundary_edges = np.flatnonzero((edge_to_elem[:, 0] < 0) | (edge_to_elem[:, 1] < 0))
        for e in boundary_edges:
            if edge_to_elem[e, 0] < 0:
                edge_to_elem[e] = [edge_to_elem[e, 1], -1]
                normals[e] = -normals[e]
        self.edge_to_elem = edge_to_elem
        self.normals = normals

        self.edge_side = np.zeros(self.num_edges, dtype=np.int64)
        for e in boundary_edges:
            key = (int(self.edges[e, 0]), int(self.edges[e, 1]))
            if key not in boundary:
                raise MeshError(ErrorCode.INVALID_MESH, f"boundary edge {key} has no marker")
            self.edge_side[e] = int(boundary[key])

        self.parent_elem = (
            np.asarray(parent_elem, dtype=np.int64) if parent_elem is not None else -np.ones(self.num_elems, dtype=np.int64)
        )
        self.parent_edge = -np.ones(self.num_edges, dtype=np.int64)
        if parent_edges:
            for e, (a, b) in enumerate(self.edges):
                self.parent_edge[e] = parent_edges.get((int(a), int(b)), -1)

        self._check_boundary_partition()

    def __repr__(self) -> str:
        return f"Mesh(vertices={self.num_vertices}, triangles={self.num_elems}, edges={self.num_edges})"

    def _check_boundary_partition(self) -> None:
        labels = {self.label(e) for e in self.boundary_edges()}
        if labels != {BoundaryLabel.DIRICHLET, BoundaryLabel.NEUMANN}:
            raise MeshError(ErrorCode.INVALID_MESH, "both Dirichlet and Neumann boundary parts must be nonempty")

    def label(self, e: int) -> BoundaryLabel | None:
        return BoundarySide(int(self.edge_side[e])).label

    def boundary_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_to_elem[:, 1] < 0)

    def interior_edges(self) -> np.ndarray:
        return np.flatnonzero(self.edge_to_elem[:, 1] >= 0)

    def edges_on(self, part: BoundaryLabel | BoundarySide) -> np.ndarray:
        if isinstance(part, BoundarySide):
            return np.flatnonzero(self.edge_side == int(part))
        return np.array([e for e in self.boundary_edges() if self.label(e) is part], dtype=np.int64)

    def vertices_on(self, part: BoundaryLabel) -> np.ndarray:
        flags = np.zeros(self.num_vertices, dtype=bool)
        flags[self.edges[self.edges_on(part)].ravel()] = True
        return flags

    def local_edge(self, t: int, e: int) -> int:
        return int(np.flatnonzero(self.elem_to_edge[t] == e)[0])

    def edge_barycentric(self, t: int, e: int, s: np.ndarray) -> np.ndarray:
        """Barycentric coordinates in triangle t of the points at parameter s along edge e.

        The parameter runs from the lower-index endpoint (s = 0) to the higher one (s = 1).
        """
        lo, hi = self.edges[e]
        tri = self.triangles[t]
        bary = np.zeros((len(s), 3))
        bary[:, int(np.flatnonzero(tri == lo)[0])] = 1.0 - s
        bary[:, int(np.flatnonzero(tri == hi)[0])] = s
        return bary

    def to_physical(self, t: int, bary: np.ndarray) -> np.ndarray:
        return bary @ self.vertices[self.triangles[t]]

    def barycentric(self, t: int, points: np.ndarray) -> np.ndarray:
        x0 = self.vertices[self.triangles[t, 0]]
        ref = np.linalg.solve(self.jacobians[t], (np.atleast_2d(points) - x0).T).T
        return np.column_stack([1.0 - ref.sum(axis=1), ref])

    def mesh_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(np.ascontiguousarray(self.vertices).tobytes())
        digest.update(np.ascontiguousarray(self.triangles).tobytes())
        digest.update(np.ascontiguousarray(self.edge_side).tobytes())
        return digest.hexdigest()[:16]

    def hull_corners(self) -> np.ndarray:
        """Boundary vertices where the boundary turns (the polygon corners)."""
        corners = []
        for v in np.flatnonzero(self.vertices_on(BoundaryLabel.DIRICHLET) | self.vertices_on(BoundaryLabel.NEUMANN)):
            incident = [e for e in self.boundary_edges() if v in self.edges[e]]
            n0, n1 = self.normals[incident[0]], self.normals[incident[1]]
            if abs(n0[0] * n1[1] - n0[1] * n1[0]) > 1e-12:
                corners.append(self.vertices[v])
        return np.array(corners)


def build_cook_mesh(refinement_level: int, base: CookBase = CookBase.DIAGONAL) -> Mesh:
    """Cook's membrane refined uniformly from a base triangulation.

    The default base splits the quadrilateral along the diagonal (0,0)-(0.48,0.6). The
    crossed base adds a vertex at the mean of the corners, so every corner touches an
    interior edge on all levels.
    """
    if refinement_level < 0:
        raise ValueError(f"refinement level must be >= 0 (got {refinement_level})")
    boundary = {
        (0, 1): BoundarySide.BOTTOM,
        (1, 2): BoundarySide.RIGHT,
        (2, 3): BoundarySide.TOP,
        (0, 3): BoundarySide.LEFT,
    }
    if base is CookBase.CROSSED:
        vertices = np.vstack([COOK_CORNERS, COOK_CORNERS.mean(axis=0)])
        triangles = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    else:
        vertices = COOK_CORNERS.copy()
        triangles = np.array([[0, 1, 2], [0, 2, 3]])
    mesh = Mesh(vertices, triangles, boundary)
    for _ in range(refinement_level):
        mesh = refine_uniform(mesh)
    log.debug("Cook mesh level %d (%s base): %r", refinement_level, base.value, mesh)
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: each triangle is split into four through its edge midpoints.

    The midpoint of edge e becomes vertex ``num_vertices + e``.
    """
    nv = mesh.num_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    a, b, c = mesh.triangles.T
    m_bc, m_ca, m_ab = (nv + mesh.elem_to_edge).T
    children = np.stack(
        [
            np.stack([a, m_ab, m_ca], axis=1),
            np.stack([m_ab, b, m_bc], axis=1),
            np.stack([m_ca, m_bc, c], axis=1),
            np.stack([m_ab, m_bc, m_ca], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    parent_elem = np.repeat(np.arange(mesh.num_elems), 4)

    boundary: dict[tuple[int, int], BoundarySide] = {}
    parent_edges: dict[tuple[int, int], int] = {}
    for e, (lo, hi) in enumerate(mesh.edges):
        mid = nv + e
        for key in ((int(lo), mid), (int(hi), mid)):
            key = (min(key), max(key))
            parent_edges[key] = e
            if mesh.edge_side[e]:
                boundary[key] = BoundarySide(int(mesh.edge_side[e]))
    return Mesh(vertices, children, boundary, parent_elem=parent_elem, parent_edges=parent_edges)


@dataclass(frozen=True)
class VertexPatch:
    """Support of the (modified) partition-of-unity function of one vertex.

    ``hat_vertices`` are the vertices where the hat function equals 1: the center plus
    the Neumann-boundary vertices it adopted. ``sides`` are the constrained sides: sides
    with both neighbours in the patch, and Neumann sides of the patch. ``closed_sides`` lie
    on the patch boundary inside the domain, where the local stresses have zero normal trace.
    """

    center: int
    hat_vertices: tuple[int, ...]
    elements: tuple[int, ...]
    sides: tuple[int, ...]
    closed_sides: tuple[int, ...]
    dirichlet_sides: tuple[int, ...]
    vertices: tuple[int, ...]
    kind: PatchKind

    def hat_values(self, mesh: Mesh, t: int) -> np.ndarray:
        """Nodal values of the hat function on the vertices of triangle t."""
        return np.isin(mesh.triangles[t], self.hat_vertices).astype(float)

    def hat_on_edge(self, mesh: Mesh, e: int) -> np.ndarray:
        """Hat values at the (lower, higher) endpoints of edge e."""
        return np.isin(mesh.edges[e], self.hat_vertices).astype(float)

    @property
    def is_standard_hat(self) -> bool:
        return len(self.hat_vertices) == 1


def _vertex_neighbours(mesh: Mesh) -> list[set[int]]:
    neighbours: list[set[int]] = [set() for _ in range(mesh.num_vertices)]
    for a, b in mesh.edges:
        neighbours[a].add(int(b))
        neighbours[b].add(int(a))
    return neighbours


def adopt_neumann_vertices(mesh: Mesh) -> dict[int, int]:
    """Map each Neumann-boundary vertex to the patch center that adopts it.

    A vertex with a neighbour off the Neumann boundary goes to the smallest such
    neighbour. One without (a corner cut off by a single triangle) goes to the adopter
    of its smallest already adopted Neumann neighbour, one graph layer at a time.
    """
    on_neumann = mesh.vertices_on(BoundaryLabel.NEUMANN)
    neighbours = _vertex_neighbours(mesh)
    adopters: dict[int, int] = {}
    pending = []
    for v in np.flatnonzero(on_neumann):
        eligible = sorted(w for w in neighbours[v] if not on_neumann[w])
        if eligible:
            adopters[int(v)] = eligible[0]
        else:
            pending.append(int(v))

    while pending:
        layer = {}
        for v in pending:
            reached = sorted(w for w in neighbours[v] if w in adopters)
            if reached:
                layer[v] = adopters[reached[0]]
        if not layer:
            v = pending[0]
            raise MeshError(
                ErrorCode.NO_INTERIOR_NEIGHBOR,
                f"Neumann vertex {v} at {mesh.vertices[v].tolist()} is not connected to any vertex off the Neumann boundary",
                {"vertex": v, "unreached": pending},
            )
        adopters.update(layer)
        pending = [v for v in pending if v not in layer]
        log.debug("Chained adoption of %d Neumann vertices", len(layer))
    return adopters


def build_patches(mesh: Mesh) -> list[VertexPatch]:
    on_neumann = mesh.vertices_on(BoundaryLabel.NEUMANN)
    adopters = adopt_neumann_vertices(mesh)
    adopted: dict[int, list[int]] = {}
    for v, z in adopters.items():
        adopted.setdefault(z, []).append(v)

    vertex_elems: list[list[int]] = [[] for _ in range(mesh.num_vertices)]
    for t, tri in enumerate(mesh.triangles):
        for v in tri:
            vertex_elems[v].append(t)

    patches = []
    for z in np.flatnonzero(~on_neumann):
        z = int(z)
        hat = tuple([z] + sorted(adopted.get(z, [])))
        elements = sorted({t for v in hat for t in vertex_elems[v]})
        inside = set(elements)
        sides, closed, dirichlet = [], [], []
        for e in sorted({int(e) for t in elements for e in mesh.elem_to_edge[t]}):
            minus, plus = mesh.edge_to_elem[e]
            if plus < 0:
                (dirichlet if mesh.label(e) is BoundaryLabel.DIRICHLET else sides).append(e)
            elif minus in inside and plus in inside:
                sides.append(e)
            else:
                closed.append(e)
        vertices = tuple(sorted({int(v) for t in elements for v in mesh.triangles[t]}))
        kind = PatchKind.DIRICHLET if dirichlet else PatchKind.INTERIOR
        patches.append(
            VertexPatch(
                center=z,
                hat_vertices=hat,
                elements=tuple(elements),
                sides=tuple(sides),
                closed_sides=tuple(closed),
                dirichlet_sides=tuple(dirichlet),
                vertices=vertices,
                kind=kind,
            )
        )
    log.debug(
        "Built %d patches (%d interior) on %r",
        len(patches),
        sum(p.kind is PatchKind.INTERIOR for p in patches),
        mesh,
    )
    return patches


def element_hats(mesh: Mesh, patches: list[VertexPatch]) -> list[list[tuple[int, np.ndarray]]]:
    """For every triangle, the (center, nodal hat values) of the patches covering it."""
    hats: list[list[tuple[int, np.ndarray]]] = [[] for _ in range(mesh.num_elems)]
    for patch in patches:
        for t in patch.elements:
            hats[t].append((patch.center, patch.hat_values(mesh, t)))
    return hats


def edge_hats(mesh: Mesh, patches: list[VertexPatch]) -> dict[int, list[tuple[int, np.ndarray]]]:
    """For every boundary edge, the (center, endpoint hat values) of patches nonzero on it."""
    hats: dict[int, list[tuple[int, np.ndarray]]] = {int(e): [] for e in mesh.boundary_edges()}
    for patch in patches:
        for e in hats:
            values = patch.hat_on_edge(mesh, e)
            if values.any():
                hats[e].append((patch.center, values))
    return hats
