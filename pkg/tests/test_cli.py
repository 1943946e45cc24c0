"""Tests for the command-line entry point."""

import csv
import os
import shutil
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from stresseq.__main__ import build_parser, load_config, main
from stresseq.models import AuditError, ErrorCode, ExitCode, SolverError


@pytest.fixture
def out_dir():
    d = tempfile.mkdtemp()
    yield Path(d)
    shutil.rmtree(d)


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in list(os.environ):
        if key.startswith("STRESSEQ_"):
            monkeypatch.delenv(key)


def test_command_is_required():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_empty_levels_is_usage_error(out_dir):
    assert main(["solve", "--levels", "", "--out", str(out_dir)]) == ExitCode.USAGE


def test_negative_gamma_is_usage_error(out_dir):
    assert main(["solve", "--gamma", "-1", "--out", str(out_dir)]) == ExitCode.USAGE


def test_bad_config_file_is_usage_error(out_dir):
    path = out_dir / "run.conf"
    path.write_text("colour = blue\n")
    assert main(["solve", "--config", str(path)]) == ExitCode.USAGE


def test_flags_override_config_file(out_dir, monkeypatch):
    monkeypatch.setenv("STRESSEQ_GAMMA", "0.5")
    path = out_dir / "run.conf"
    path.write_text("gamma = 0.1\nlevels = 2,3\nlambda = 100\n")
    args = build_parser().parse_args(["report", "--config", str(path), "--levels", "4", "--mode", "naive"])
    config = load_config(args)
    assert config.gamma == 0.1
    assert config.levels == (4,)
    assert config.lam == 100.0
    assert config.projection_mode.value == "naive"
    assert config.dual_norm.value == "neumann_zero"
    assert config.base_mesh.value == "diagonal"


@patch("stresseq.__main__.cmd_solve")
def test_dispatch_passes_config(mock_solve, out_dir):
    assert main(["solve", "--levels", "2,3", "--gamma", "0.05", "--out", str(out_dir), "--strict"]) == ExitCode.OK
    config = mock_solve.call_args[0][0]
    assert config.levels == (2, 3)
    assert config.gamma == 0.05
    assert config.strict
    assert config.out_dir == str(out_dir)


@patch("stresseq.__main__.cmd_solve")
def test_solver_failure_exit_code(mock_solve, out_dir):
    mock_solve.side_effect = SolverError(ErrorCode.NEWTON_DIVERGED, "no convergence")
    assert main(["solve", "--out", str(out_dir)]) == ExitCode.SOLVER_FAILURE


@patch("stresseq.__main__.cmd_equilibrate")
def test_audit_failure_exit_code(mock_eq, out_dir):
    mock_eq.side_effect = AuditError(ErrorCode.AUDIT_FAILED, "jump residual too large")
    assert main(["equilibrate", "--out", str(out_dir), "--strict"]) == ExitCode.AUDIT_FAILURE


def test_equilibrate_without_checkpoint_fails(out_dir):
    assert main(["equilibrate", "--levels", "1", "--out", str(out_dir)]) == ExitCode.SOLVER_FAILURE


def test_end_to_end(out_dir, capsys):
    flags = ["--levels", "1,2", "--gamma", "0.1", "--out", str(out_dir)]
    assert main(["solve", *flags]) == ExitCode.OK
    assert (out_dir / "level2_gamma0.1.chk").exists()
    assert (out_dir / "level1_gamma0.1_deformed.vtk").exists()

    assert main(["equilibrate", *flags, "--strict"]) == ExitCode.OK
    assert (out_dir / "level2_gamma0.1_compatible_stress.txt").exists()
    with open(out_dir / "level2_gamma0.1_compatible_audit.csv") as fh:
        assert all(row["ok"] == "true" for row in csv.DictReader(fh))

    assert main(["verify", *flags]) == ExitCode.OK
    assert (out_dir / "verify_level2_gamma0.1.csv").exists()

    assert main(["report", *flags]) == ExitCode.OK
    assert not (out_dir / "tables.csv").exists()
    tables = {}
    for n in (1, 2, 3):
        with open(out_dir / f"table{n}.csv") as fh:
            tables[n] = list(csv.DictReader(fh))
    assert {row["level"] for row in tables[1]} == {"1", "2"}
    assert {row["level"] for row in tables[3]} == {"2"}
    assert {row["norm"] for row in tables[3]} == {"neumann_zero"}
    assert {row["quantity"] for row in tables[3]} == {"equilibrated", "raw"}
    assert all(abs(float(row["resultant_y"]) + 0.016) < 1e-8 for row in tables[2])
    assert (out_dir / "profile_level1_gamma0.1.csv").exists()
    assert "Cook's membrane summary" in capsys.readouterr().out


def test_zero_load_solve_is_reproducible(out_dir):
    flags = ["solve", "--levels", "1", "--gamma", "0", "--out", str(out_dir)]
    assert main(flags) == ExitCode.OK
    path = out_dir / "level1_gamma0.chk"
    first = path.read_bytes()
    assert main(flags) == ExitCode.OK
    assert path.read_bytes() == first
    values = [float(line) for line in first.decode().splitlines() if line[:1] not in ("#", "u", "p")]
    assert values and all(v == 0.0 for v in values)


def test_base_mesh_and_norm_flags(out_dir, monkeypatch):
    monkeypatch.setenv("STRESSEQ_DUAL_NORM", "full")
    path = out_dir / "run.conf"
    path.write_text("base = crossed\n")
    args = build_parser().parse_args(["report", "--config", str(path)])
    config = load_config(args)
    assert config.base_mesh.value == "crossed"
    assert config.dual_norm.value == "full"
    args = build_parser().parse_args(["report", "--base-mesh", "diagonal", "--dual-norm", "neumann_zero"])
    config = load_config(args)
    assert config.base_mesh.value == "diagonal"
    assert config.dual_norm.value == "neumann_zero"


def test_crossed_base_solves_from_level_zero(out_dir):
    flags = ["--levels", "0", "--gamma", "0.05", "--base-mesh", "crossed", "--out", str(out_dir)]
    assert main(["solve", *flags]) == ExitCode.OK
    assert main(["equilibrate", *flags]) == ExitCode.OK
    assert (out_dir / "level0_gamma0.05_compatible_stress.txt").exists()
