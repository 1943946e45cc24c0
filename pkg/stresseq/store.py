"""Result files and the SQLite index that tracks them."""

from __future__ import annotations

import csv
import logging
import sqlite3
from pathlib import Path

import numpy as np

from stresseq.femspace import BrokenRTSpace, BrokenRTStress, TaylorHoodSpace
from stresseq.hyperelastic import DisplacementPressureField, MaterialParams
from stresseq.mesh import Mesh, build_cook_mesh
from stresseq.models import Artifact, ArtifactError, ArtifactKind, BoundarySide, ErrorCode, NewtonReport

log = logging.getLogger(__name__)

SCHEMA = """\
CREATE TABLE IF NOT EXISTS artifacts (
    id         INTEGER PRIMARY KEY AUTOINCREMENT,
    level      INTEGER NOT NULL,
    gamma      REAL NOT NULL,
    kind       TEXT NOT NULL,
    mode       TEXT NOT NULL DEFAULT '',
    path       TEXT NOT NULL,
    mesh_hash  TEXT NOT NULL,
    created_at TEXT NOT NULL DEFAULT (datetime('now')),
    UNIQUE (level, gamma, kind, mode)
);
"""

INDEX_NAME = "artifacts.db"


def artifact_stem(level: int, gamma: float) -> str:
    return f"level{level}_gamma{gamma:g}"


def fmt_float(value) -> str:
    """Shortest round-tripping text of a Python or numpy scalar."""
    return repr(float(value))


class ArtifactStore:
    """Writes result files under ``out_dir`` and records each one in an SQLite index."""

    def __init__(self, out_dir: str | Path) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.db_path = self.out_dir / INDEX_NAME
        self._init_schema()

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self.db_path)
        conn.row_factory = sqlite3.Row
        return conn

    def _init_schema(self) -> None:
        with self._connect() as conn:
            conn.executescript(SCHEMA)

    def _row_to_artifact(self, row: sqlite3.Row) -> Artifact:
        return Artifact(
            id=row["id"],
            level=row["level"],
            gamma=row["gamma"],
            kind=ArtifactKind(row["kind"]),
            path=row["path"],
            mesh_hash=row["mesh_hash"],
            mode=row["mode"],
            created_at=row["created_at"],
        )

    def record(
        self, level: int, gamma: float, kind: ArtifactKind, path: Path, mesh_hash: str, mode: str = ""
    ) -> Artifact:
        with self._connect() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO artifacts (level, gamma, kind, mode, path, mesh_hash) VALUES (?, ?, ?, ?, ?, ?)",
                (level, gamma, kind.value, mode, str(path), mesh_hash),
            )
            row = conn.execute(
                "SELECT * FROM artifacts WHERE level = ? AND gamma = ? AND kind = ? AND mode = ?",
                (level, gamma, kind.value, mode),
            ).fetchone()
        return self._row_to_artifact(row)

    def get(self, level: int, gamma: float, kind: ArtifactKind, mode: str = "") -> Artifact:
        with self._connect() as conn:
            row = conn.execute(
                "SELECT * FROM artifacts WHERE level = ? AND gamma = ? AND kind = ? AND mode = ?",
                (level, gamma, kind.value, mode),
            ).fetchone()
        if row is None:
            raise ArtifactError(
                ErrorCode.MISSING_ARTIFACT,
                f"{kind.value} for level {level}, gamma {gamma:g}{' (' + mode + ')' if mode else ''} not found",
                {"level": level, "gamma": gamma, "kind": kind.value},
            )
        artifact = self._row_to_artifact(row)
        if not Path(artifact.path).exists():
            raise ArtifactError(ErrorCode.MISSING_ARTIFACT, f"file {artifact.path} not found", {"path": artifact.path})
        return artifact

    def get_all(self, kind: ArtifactKind | None = None) -> list[Artifact]:
        with self._connect() as conn:
            if kind is not None:
                rows = conn.execute(
                    "SELECT * FROM artifacts WHERE kind = ? ORDER BY level, gamma, mode", (kind.value,)
                ).fetchall()
            else:
                rows = conn.execute("SELECT * FROM artifacts ORDER BY level, gamma, kind, mode").fetchall()
        return [self._row_to_artifact(r) for r in rows]

    def solved_gammas(self, level: int) -> list[float]:
        with self._connect() as conn:
            rows = conn.execute(
                "SELECT DISTINCT gamma FROM artifacts WHERE level = ? AND kind = ? ORDER BY gamma",
                (level, ArtifactKind.CHECKPOINT.value),
            ).fetchall()
        return [row["gamma"] for row in rows]

    def path_for(self, level: int, gamma: float, suffix: str) -> Path:
        return self.out_dir / f"{artifact_stem(level, gamma)}{suffix}"

    # --- displacement / pressure ------------------------------------------

    def write_checkpoint(self, fld: DisplacementPressureField, level: int) -> Path:
        """Header of ``# key = value`` lines, then the u and p arrays one float per line."""
        path = self.path_for(level, fld.gamma, ".chk")
        mesh_hash = fld.mesh.mesh_hash()
        lines = [
            f"# mesh_hash = {mesh_hash}",
            f"# level = {level}",
            "# k = 1",
            f"# mu = {fmt_float(fld.params.mu)}",
            f"# lambda = {fmt_float(fld.params.lam)}",
            f"# gamma = {fmt_float(fld.gamma)}",
            f"u {fld.u.size}",
            *(fmt_float(v) for v in fld.u),
            f"p {fld.p.size}",
            *(fmt_float(v) for v in fld.p),
        ]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.record(level, fld.gamma, ArtifactKind.CHECKPOINT, path, mesh_hash)
        log.info("Wrote checkpoint: %s", path)
        return path

    def read_checkpoint(self, level: int, gamma: float, mesh: Mesh | None = None) -> DisplacementPressureField:
        artifact = self.get(level, gamma, ArtifactKind.CHECKPOINT)
        return read_checkpoint(artifact.path, mesh or build_cook_mesh(level))

    def write_newton_history(self, report: NewtonReport, level: int, mesh_hash: str) -> Path:
        path = self.path_for(level, report.gamma, "_newton.txt")
        lines = [f"# gamma = {fmt_float(report.gamma)}", f"# bisections = {report.bisections}", "load iteration residual"]
        for load, history in zip(report.load_steps, report.residuals):
            lines.extend(f"{fmt_float(load)} {i} {fmt_float(res)}" for i, res in enumerate(history))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.record(level, report.gamma, ArtifactKind.NEWTON, path, mesh_hash)
        return path

    # --- meshes ---------------------------------------------------------------

    def write_meshes(self, fld: DisplacementPressureField, level: int) -> list[Path]:
        mesh = fld.mesh
        mesh_hash = mesh.mesh_hash()
        vertex_u = fld.vertex_displacements()
        paths = [
            (ArtifactKind.MESH, self.path_for(level, fld.gamma, "_mesh.txt"), format_mesh(mesh)),
            (ArtifactKind.MESH_VTK, self.path_for(level, fld.gamma, ".vtk"), format_vtk(mesh, vertex_u)),
            (
                ArtifactKind.DEFORMED_VTK,
                self.path_for(level, fld.gamma, "_deformed.vtk"),
                format_vtk(mesh, vertex_u, deformed=True),
            ),
        ]
        for kind, path, content in paths:
            path.write_text(content, encoding="utf-8")
            self.record(level, fld.gamma, kind, path, mesh_hash)
        log.info("Wrote meshes for level %d: %s", level, ", ".join(str(p) for _, p, _ in paths))
        return [p for _, p, _ in paths]

    # --- stresses -------------------------------------------------------------

    def write_stress(self, stress: BrokenRTStress, level: int, gamma: float, mode: str) -> Path:
        """Coefficient table: element, row, then the 8 dofs of that row."""
        path = self.path_for(level, gamma, f"_{mode}_stress.txt")
        mesh_hash = stress.mesh.mesh_hash()
        lines = [f"# mesh_hash = {mesh_hash}", f"# gamma = {fmt_float(gamma)}", f"# mode = {mode}", "element row c0 c1 c2 c3 c4 c5 c6 c7"]
        for t, rows in enumerate(stress.coeffs):
            for r, coeffs in enumerate(rows):
                lines.append(" ".join([str(t), str(r), *(fmt_float(c) for c in coeffs)]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.record(level, gamma, ArtifactKind.STRESS, path, mesh_hash, mode)

        points_path = self.path_for(level, gamma, f"_{mode}_stress_points.csv")
        write_csv(points_path, ["element", "x", "y", "P11", "P12", "P21", "P22"], stress_point_rows(stress))
        self.record(level, gamma, ArtifactKind.STRESS_POINTS, points_path, mesh_hash, mode)
        log.info("Wrote stress: %s", path)
        return path

    def read_stress(self, level: int, gamma: float, mode: str, rt_space: BrokenRTSpace) -> BrokenRTStress:
        artifact = self.get(level, gamma, ArtifactKind.STRESS, mode)
        if artifact.mesh_hash != rt_space.mesh.mesh_hash():
            raise ArtifactError(ErrorCode.CHECKPOINT_MISMATCH, f"{artifact.path} was written for another mesh")
        coeffs = np.zeros((rt_space.mesh.num_elems, 2, 8))
        for line in Path(artifact.path).read_text(encoding="utf-8").splitlines():
            if line.startswith("#") or line.startswith("element"):
                continue
            parts = line.split()
            coeffs[int(parts[0]), int(parts[1])] = [float(v) for v in parts[2:]]
        return BrokenRTStress(rt_space, coeffs)

    def write_table(self, filename: str, header: list[str], rows: list[list[str]]) -> Path:
        path = self.out_dir / filename
        write_csv(path, header, rows)
        log.info("Wrote table: %s", path)
        return path


def read_checkpoint(path: str | Path, mesh: Mesh) -> DisplacementPressureField:
    header: dict[str, str] = {}
    arrays: dict[str, list[float]] = {}
    current = None
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            key, value = (part.strip() for part in line[1:].split("=", 1))
            header[key] = value
        elif line[:1] in ("u", "p"):
            current = line.split()[0]
            arrays[current] = []
        elif line.strip():
            arrays[current].append(float(line))
    if header.get("mesh_hash") != mesh.mesh_hash():
        raise ArtifactError(
            ErrorCode.CHECKPOINT_MISMATCH,
            f"{path} was written for mesh {header.get('mesh_hash')}, not {mesh.mesh_hash()}",
        )
    space = TaylorHoodSpace(mesh)
    u, p = np.array(arrays.get("u", [])), np.array(arrays.get("p", []))
    if u.size != space.num_u or p.size != space.num_p:
        raise ArtifactError(ErrorCode.CHECKPOINT_MISMATCH, f"{path} has {u.size}/{p.size} coefficients")
    params = MaterialParams(mu=float(header["mu"]), lam=float(header["lambda"]))
    return DisplacementPressureField(space, u, p, params, float(header["gamma"]))


def format_mesh(mesh: Mesh) -> str:
    """Plain-text mesh: vertex table (x y), triangle table (v0 v1 v2), boundary edges (v_lo v_hi side label)."""
    lines = [f"vertices {mesh.num_vertices}"]
    lines += [f"{fmt_float(x)} {fmt_float(y)}" for x, y in mesh.vertices]
    lines.append(f"triangles {mesh.num_elems}")
    lines += [" ".join(str(v) for v in tri) for tri in mesh.triangles]
    boundary = mesh.boundary_edges()
    lines.append(f"boundary {len(boundary)}")
    for e in boundary:
        side = BoundarySide(int(mesh.edge_side[e]))
        lines.append(f"{mesh.edges[e, 0]} {mesh.edges[e, 1]} {side.name.lower()} {side.label.value}")
    return "\n".join(lines) + "\n"


def format_vtk(mesh: Mesh, displacement: np.ndarray, deformed: bool = False) -> str:
    """Legacy ASCII VTK with the vertex displacements as point data."""
    points = mesh.vertices + displacement if deformed else mesh.vertices
    lines = [
        "# vtk DataFile Version 3.0",
        "deformed configuration" if deformed else "reference configuration",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.num_vertices} double",
        *(f"{fmt_float(x)} {fmt_float(y)} 0.0" for x, y in points),
        f"CELLS {mesh.num_elems} {4 * mesh.num_elems}",
        *(f"3 {a} {b} {c}" for a, b, c in mesh.triangles),
        f"CELL_TYPES {mesh.num_elems}",
        *("5" for _ in range(mesh.num_elems)),
        f"POINT_DATA {mesh.num_vertices}",
        "VECTORS displacement double",
        *(f"{fmt_float(ux)} {fmt_float(uy)} 0.0" for ux, uy in displacement),
    ]
    return "\n".join(lines) + "\n"


def stress_point_rows(stress: BrokenRTStress) -> list[list[str]]:
    """Stress at each element's centroid and vertices."""
    mesh = stress.mesh
    bary = np.vstack([np.full(3, 1.0 / 3.0), np.eye(3)])
    rows = []
    for t in range(mesh.num_elems):
        values = stress.evaluate(t, bary)
        for point, value in zip(mesh.to_physical(t, bary), values):
            rows.append([str(t), fmt_float(point[0]), fmt_float(point[1]), *(fmt_float(v) for v in value.ravel())])
    return rows


def write_csv(path: Path, header: list[str], rows: list[list[str]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path
