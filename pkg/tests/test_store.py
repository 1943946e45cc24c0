"""Tests for the artifact store."""

import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from stresseq.femspace import BrokenRTSpace, BrokenRTStress, TaylorHoodSpace
from stresseq.hyperelastic import DisplacementPressureField, MaterialParams
from stresseq.mesh import build_cook_mesh
from stresseq.models import ArtifactError, ArtifactKind, ErrorCode, NewtonReport
from stresseq.store import ArtifactStore, artifact_stem, format_mesh, format_vtk, read_checkpoint


@pytest.fixture
def store():
    out_dir = tempfile.mkdtemp()
    s = ArtifactStore(out_dir)
    yield s
    shutil.rmtree(out_dir)


@pytest.fixture
def field1(mesh1):
    space = TaylorHoodSpace(mesh1)
    rng = np.random.default_rng(3)
    u = 0.01 * rng.standard_normal(space.num_u)
    u[space.dirichlet_dofs] = 0.0
    return DisplacementPressureField(space, u, rng.standard_normal(space.num_p), MaterialParams(), 0.05)


def test_artifact_stem():
    assert artifact_stem(3, 0.2) == "level3_gamma0.2"
    assert artifact_stem(5, 0.05) == "level5_gamma0.05"


def test_record_and_get(store: ArtifactStore):
    path = store.out_dir / "x.txt"
    path.write_text("x")
    artifact = store.record(2, 0.2, ArtifactKind.MESH, path, "abc")
    assert artifact.id is not None
    assert artifact.kind is ArtifactKind.MESH
    fetched = store.get(2, 0.2, ArtifactKind.MESH)
    assert fetched.path == str(path)
    assert fetched.mesh_hash == "abc"
    assert fetched.created_at is not None


def test_get_not_found(store: ArtifactStore):
    with pytest.raises(ArtifactError, match="not found") as exc:
        store.get(3, 0.2, ArtifactKind.CHECKPOINT)
    assert exc.value.code is ErrorCode.MISSING_ARTIFACT


def test_get_missing_file(store: ArtifactStore):
    store.record(3, 0.2, ArtifactKind.CHECKPOINT, store.out_dir / "gone.chk", "abc")
    with pytest.raises(ArtifactError, match="not found"):
        store.get(3, 0.2, ArtifactKind.CHECKPOINT)


def test_record_replaces_same_key(store: ArtifactStore):
    for name in ("a.txt", "b.txt"):
        store.record(1, 0.5, ArtifactKind.STRESS, store.out_dir / name, "h", mode="naive")
    artifacts = store.get_all(ArtifactKind.STRESS)
    assert len(artifacts) == 1
    assert artifacts[0].path.endswith("b.txt")
    assert artifacts[0].mode == "naive"


def test_solved_gammas(store: ArtifactStore, field1):
    for gamma in (0.5, 0.05):
        field1.gamma = gamma
        store.write_checkpoint(field1, 1)
    assert store.solved_gammas(1) == [0.05, 0.5]
    assert store.solved_gammas(2) == []


def test_checkpoint_round_trip(store: ArtifactStore, field1, mesh1):
    store.write_checkpoint(field1, 1)
    loaded = store.read_checkpoint(1, 0.05, mesh1)
    assert np.array_equal(loaded.u, field1.u)
    assert np.array_equal(loaded.p, field1.p)
    assert loaded.gamma == 0.05
    assert loaded.params.incompressible


def test_checkpoint_for_other_mesh_rejected(store: ArtifactStore, field1):
    path = store.write_checkpoint(field1, 1)
    with pytest.raises(ArtifactError) as exc:
        read_checkpoint(path, build_cook_mesh(2))
    assert exc.value.code is ErrorCode.CHECKPOINT_MISMATCH


def test_checkpoint_is_deterministic(store: ArtifactStore, field1):
    first = store.write_checkpoint(field1, 1).read_bytes()
    second = store.write_checkpoint(field1, 1).read_bytes()
    assert first == second


def test_stress_round_trip(store: ArtifactStore, mesh1):
    space = BrokenRTSpace(mesh1)
    coeffs = np.random.default_rng(4).standard_normal((mesh1.num_elems, 2, 8))
    store.write_stress(BrokenRTStress(space, coeffs), 1, 0.2, "compatible")
    loaded = store.read_stress(1, 0.2, "compatible", space)
    assert np.array_equal(loaded.coeffs, coeffs)
    points = store.get(1, 0.2, ArtifactKind.STRESS_POINTS, "compatible")
    lines = Path(points.path).read_text().splitlines()
    assert lines[0] == "element,x,y,P11,P12,P21,P22"
    assert len(lines) == 1 + 4 * mesh1.num_elems


def test_write_meshes(store: ArtifactStore, field1):
    paths = store.write_meshes(field1, 1)
    assert len(paths) == 3
    assert all(p.exists() for p in paths)
    kinds = {a.kind for a in store.get_all()}
    assert {ArtifactKind.MESH, ArtifactKind.MESH_VTK, ArtifactKind.DEFORMED_VTK} <= kinds


def test_format_mesh(mesh1):
    lines = format_mesh(mesh1).splitlines()
    assert lines[0] == f"vertices {mesh1.num_vertices}"
    assert f"triangles {mesh1.num_elems}" in lines
    boundary = lines[lines.index(f"boundary {len(mesh1.boundary_edges())}") + 1 :]
    assert len(boundary) == len(mesh1.boundary_edges())
    assert any(line.endswith("left dirichlet") for line in boundary)


def test_format_vtk_deformed(mesh1):
    displacement = np.full((mesh1.num_vertices, 2), 0.5)
    text = format_vtk(mesh1, displacement, deformed=True)
    assert f"POINTS {mesh1.num_vertices} double" in text
    assert "VECTORS displacement double" in text
    first_point = text.splitlines()[5].split()
    assert float(first_point[0]) == pytest.approx(mesh1.vertices[0, 0] + 0.5)


def test_numpy_scalars_written_as_plain_numbers(mesh1):
    # iterating numpy arrays yields np.float64, whose repr is not a bare number
    displacement = np.full((mesh1.num_vertices, 2), np.float64(0.25))
    texts = [format_mesh(mesh1), format_vtk(mesh1, displacement), format_vtk(mesh1, displacement, deformed=True)]
    for text in texts:
        assert "np." not in text
        assert "float64" not in text
    first_point = texts[1].splitlines()[5].split()
    assert [float(v) for v in first_point[:2]] == mesh1.vertices[0].tolist()


def test_newton_history(store: ArtifactStore):
    report = NewtonReport(gamma=0.2, load_steps=[0.1, 0.2], iterations=[2, 1], residuals=[[1.0, 1e-3, 1e-12], [1e-2, 1e-13]])
    path = store.write_newton_history(report, 2, "h")
    lines = path.read_text().splitlines()
    assert lines[2] == "load iteration residual"
    assert len(lines) == 3 + 5
