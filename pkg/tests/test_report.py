"""Tests for the report module."""

import math
import shutil
import tempfile
from pathlib import Path

import numpy as np
import pytest

from stresseq.diagnostics import TractionProfile
from stresseq.equilibration import Equilibrator
from stresseq.femspace import BrokenRTSpace
from stresseq.hyperelastic import MaterialParams, solve_newton
from stresseq.mesh import build_cook_mesh, build_patches
from stresseq.models import AuditReport, DualNorm, ProjectionMode
from stresseq.projection import project_all
from stresseq.report import (
    DIFFERENCE_HEADER,
    RESULTANT_HEADER,
    TABLE_FILES,
    LevelResult,
    attach_rates,
    audit_rows,
    collect_level,
    format_summary,
    profile_rows,
    table_rows,
    write_report_file,
)


def _result(level, gamma=0.2, eq_error=None, raw_error=None):
    return LevelResult(
        level=level,
        gamma=gamma,
        params=MaterialParams(),
        naive_idn=1e-2 / level,
        naive_resultant=np.array([0.0, -0.03]),
        equilibrated_idn=1e-12,
        equilibrated_resultant=np.array([0.0, -0.16 * gamma]),
        equilibrated_error=eq_error,
        raw_error=raw_error,
    )


@pytest.fixture
def tmpdir():
    d = tempfile.mkdtemp()
    yield Path(d)
    shutil.rmtree(d)


def test_attach_rates_for_consecutive_levels():
    results = [_result(3, eq_error=0.5, raw_error=1.0), _result(2, eq_error=1.0, raw_error=2.0), _result(5, eq_error=0.1)]
    attach_rates(results)
    by_level = {r.level: r for r in results}
    assert by_level[3].rates == pytest.approx({"equilibrated": 1.0, "raw": 1.0})
    assert by_level[2].rates == {}
    # level 4 missing, so no rate for level 5
    assert by_level[5].rates == {}


def test_attach_rates_keeps_loads_apart():
    results = [_result(2, gamma=0.1, eq_error=1.0), _result(3, gamma=0.2, eq_error=0.25)]
    attach_rates(results)
    assert all(r.rates == {} for r in results)


def test_table_rows_layout():
    results = [_result(3, eq_error=0.5, raw_error=1.0), _result(2)]
    results[0].rates = {"equilibrated": 1.5}
    results[0].norm = DualNorm.NEUMANN_ZERO
    tables = table_rows(results)
    assert list(tables) == ["table1.csv", "table2.csv", "table3.csv"]
    naive, equilibrated, differences = tables.values()
    assert all(len(row) == len(RESULTANT_HEADER) for row in naive + equilibrated)
    assert all(len(row) == len(DIFFERENCE_HEADER) for row in differences)
    # sorted by level
    assert [row[1] for row in naive] == ["2", "3"]
    assert naive[0][3] == "inf"
    assert float(naive[0][4]) == pytest.approx(5e-3)
    assert float(equilibrated[1][6]) == pytest.approx(-0.032)
    eq_row, raw_row = differences
    assert eq_row[4:] == ["neumann_zero", "equilibrated", "0.5", "1.5"]
    assert raw_row[5] == "raw"
    assert raw_row[7] == ""


def test_table_files_have_own_headers():
    assert TABLE_FILES["table1.csv"] == TABLE_FILES["table2.csv"] == RESULTANT_HEADER
    assert TABLE_FILES["table3.csv"] == DIFFERENCE_HEADER
    assert "table" not in RESULTANT_HEADER + DIFFERENCE_HEADER


def test_audit_rows_flags():
    report = AuditReport(
        divergence=1e-12,
        jump=1e-3,
        neumann=0.0,
        neumann_resultant=0.0,
        symmetry=1e-11,
        rigid_balance=math.nan,
        scale=2.0,
    )
    rows = {row[0]: row for row in audit_rows(report, 1e-9)}
    assert rows["divergence"][3] == "true"
    assert rows["jump"][3] == "false"
    assert rows["rigid_balance"][3] == "false"
    assert float(rows["symmetry"][2]) == pytest.approx(2e-9)


def test_format_summary_empty():
    assert format_summary([]) == "No levels evaluated."


def test_format_summary_lists_levels():
    results = [_result(2), _result(3, eq_error=0.5)]
    results[1].rates = {"equilibrated": 1.2}
    summary = format_summary(results)
    assert "Cook's membrane summary" in summary
    assert "1.200" in summary
    assert "Largest |I_Dn|" in summary


def test_write_report_file(tmpdir):
    path = write_report_file("hello", tmpdir / "sub" / "summary.txt")
    assert path.read_text() == "hello"


def test_profile_rows_share_arclength():
    arclength = np.array([[0.0, 0.5], [0.5, 1.0]])
    profiles = [
        TractionProfile(edges=[0, 1], arclength=arclength, values=np.full((2, 2), v)) for v in (1.0, 2.0, 3.0)
    ]
    rows = profile_rows(*profiles)
    assert len(rows) == 4
    assert rows[0] == ["0.0", "1.0", "2.0", "3.0"]


@pytest.fixture(scope="module")
def ladder():
    """Naive and equilibrated stresses of the gamma = 0.2 solves on levels 2 to 4."""
    levels = {}
    for level in (2, 3, 4):
        mesh = build_cook_mesh(level)
        patches = build_patches(mesh)
        fld = solve_newton(mesh, MaterialParams(), 0.2)
        naive = project_all(fld, patches, ProjectionMode.NAIVE).stress(BrokenRTSpace(mesh))
        equilibrated = Equilibrator(fld, patches, strict=True).run().stress
        levels[level] = (fld, naive, equilibrated)
    return levels


def test_equilibrated_traction_converges_faster_than_raw(ladder):
    results = [collect_level(*ladder[2], 2)]
    for level in (3, 4):
        fld, _, equilibrated = ladder[level - 1]
        results.append(collect_level(*ladder[level], level, (fld, equilibrated), DualNorm.NEUMANN_ZERO))
    attach_rates(results)
    fine = results[-1]
    assert fine.norm is DualNorm.NEUMANN_ZERO
    assert fine.equilibrated_error < results[1].equilibrated_error
    assert fine.rates["equilibrated"] > fine.rates["raw"]
    for r in results:
        assert abs(r.equilibrated_idn) < 1e-3 * abs(r.naive_idn)
