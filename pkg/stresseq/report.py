"""Benchmark tables, traction profiles and run summaries."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from stresseq.diagnostics import (
    BoundaryFunctional,
    TractionProfile,
    convergence_rates,
    hminus_half_norm,
    raw_traction_profile,
    resultant_normal_traction,
    resultant_traction,
    traction_profile,
)
from stresseq.femspace import BrokenRTStress, TaylorHoodSpace
from stresseq.hyperelastic import DisplacementPressureField, MaterialParams
from stresseq.models import AuditReport, BoundaryLabel, DualNorm
from stresseq.verification import VerificationRow

log = logging.getLogger(__name__)

RESULTANT_HEADER = ["gamma", "level", "mu", "lambda", "i_dn", "resultant_x", "resultant_y"]
DIFFERENCE_HEADER = ["gamma", "level", "mu", "lambda", "norm", "quantity", "error", "rate"]
# naive resultants, equilibrated resultants, level differences
TABLE_FILES = {
    "table1.csv": RESULTANT_HEADER,
    "table2.csv": RESULTANT_HEADER,
    "table3.csv": DIFFERENCE_HEADER,
}
PROFILE_HEADER = ["arclength", "naive", "equilibrated", "raw"]
VERIFY_HEADER = [
    "patch_id",
    "kind",
    "dim_computed",
    "dim_predicted",
    "principal_angle",
    "incompat_naive",
    "incompat_compatible",
    "test_spaces",
]
AUDIT_HEADER = ["family", "max_residual", "tolerance", "ok"]


@dataclass
class LevelResult:
    """Boundary quantities of one solve on one mesh level."""

    level: int
    gamma: float
    params: MaterialParams
    naive_idn: float
    naive_resultant: np.ndarray
    equilibrated_idn: float
    equilibrated_resultant: np.ndarray
    norm: DualNorm = DualNorm.FULL
    # differences to the next coarser level, in the dual boundary norm
    equilibrated_error: float | None = None
    raw_error: float | None = None
    rates: dict[str, float] = field(default_factory=dict)


def collect_level(
    fld: DisplacementPressureField,
    naive: BrokenRTStress,
    equilibrated: BrokenRTStress,
    level: int,
    coarse: tuple[DisplacementPressureField, BrokenRTStress] | None = None,
    norm: DualNorm = DualNorm.FULL,
) -> LevelResult:
    """Resultants of the naive and equilibrated stresses, plus level differences when ``coarse`` is given."""
    result = LevelResult(
        level=level,
        gamma=fld.gamma,
        params=fld.params,
        naive_idn=resultant_normal_traction(naive),
        naive_resultant=resultant_traction(naive, BoundaryLabel.DIRICHLET),
        equilibrated_idn=resultant_normal_traction(equilibrated),
        equilibrated_resultant=resultant_traction(equilibrated, BoundaryLabel.DIRICHLET),
        norm=norm,
    )
    if coarse is not None:
        coarse_fld, coarse_stress = coarse
        fine = fld.mesh
        space = TaylorHoodSpace(fine)
        result.equilibrated_error = hminus_half_norm(
            BoundaryFunctional.from_stress(equilibrated) - BoundaryFunctional.from_coarse_stress(coarse_stress, fine),
            space,
            norm,
        )
        result.raw_error = hminus_half_norm(
            BoundaryFunctional.from_field(fld) - BoundaryFunctional.from_coarse_field(coarse_fld, fine),
            space,
            norm,
        )
    log.info(
        "[level %d] I_Dn naive %.3e, equilibrated %.3e",
        level,
        result.naive_idn,
        result.equilibrated_idn,
    )
    return result


def attach_rates(results: list[LevelResult]) -> None:
    """Fill ``rates`` for consecutive levels of the same load that both carry errors."""
    for quantity in ("equilibrated", "raw"):
        by_gamma: dict[float, list[LevelResult]] = {}
        for r in results:
            if getattr(r, f"{quantity}_error") is not None:
                by_gamma.setdefault(r.gamma, []).append(r)
        for series in by_gamma.values():
            series.sort(key=lambda r: r.level)
            for coarse, fine in zip(series, series[1:]):
                if fine.level != coarse.level + 1:
                    continue
                errors = [getattr(coarse, f"{quantity}_error"), getattr(fine, f"{quantity}_error")]
                fine.rates[quantity] = convergence_rates(errors)[0]


def _fmt(value: float | None) -> str:
    return "" if value is None else repr(float(value))


def _meta(r: LevelResult) -> list[str]:
    return [_fmt(r.gamma), str(r.level), _fmt(r.params.mu), _fmt(r.params.lam)]


def table_rows(results: list[LevelResult]) -> dict[str, list[list[str]]]:
    """Rows of the three benchmark tables keyed by file name, each sorted by load and level."""
    ordered = sorted(results, key=lambda r: (r.gamma, r.level))
    naive = [[*_meta(r), _fmt(r.naive_idn), *map(_fmt, r.naive_resultant)] for r in ordered]
    equilibrated = [[*_meta(r), _fmt(r.equilibrated_idn), *map(_fmt, r.equilibrated_resultant)] for r in ordered]
    differences = []
    for r in ordered:
        for quantity, error in (("equilibrated", r.equilibrated_error), ("raw", r.raw_error)):
            if error is None:
                continue
            differences.append([*_meta(r), r.norm.value, quantity, _fmt(error), _fmt(r.rates.get(quantity))])
    return dict(zip(TABLE_FILES, (naive, equilibrated, differences)))


def profile_rows(naive: TractionProfile, equilibrated: TractionProfile, raw: TractionProfile) -> list[list[str]]:
    """One row per edge endpoint along the Dirichlet boundary; all profiles share the arclength."""
    rows = []
    for (s, a), (_, b), (_, c) in zip(naive.rows(), equilibrated.rows(), raw.rows()):
        rows.append([_fmt(s), _fmt(a), _fmt(b), _fmt(c)])
    return rows


def level_profiles(
    fld: DisplacementPressureField, naive: BrokenRTStress, equilibrated: BrokenRTStress
) -> list[list[str]]:
    return profile_rows(traction_profile(naive), traction_profile(equilibrated), raw_traction_profile(fld))


def verify_rows(rows: list[VerificationRow]) -> list[list[str]]:
    return [row.as_csv_row() for row in rows]


def audit_rows(report: AuditReport, tol: float) -> list[list[str]]:
    limit = tol * report.scale
    return [
        [name, _fmt(value), _fmt(limit), "true" if value <= limit else "false"]
        for name, value in report.families().items()
    ]


def format_summary(results: list[LevelResult]) -> str:
    if not results:
        return "No levels evaluated."

    lines = [
        "# Cook's membrane summary",
        "",
        f"{'gamma':>8} {'level':>5} {'I_Dn naive':>12} {'I_Dn equil.':>12} {'R_y equil.':>12} {'rate eq':>8} {'rate raw':>8}",
    ]
    for r in sorted(results, key=lambda r: (r.gamma, r.level)):
        rate_eq = r.rates.get("equilibrated", math.nan)
        rate_raw = r.rates.get("raw", math.nan)
        lines.append(
            f"{r.gamma:>8g} {r.level:>5d} {r.naive_idn:>12.3e} {r.equilibrated_idn:>12.3e} "
            f"{r.equilibrated_resultant[1]:>12.4e} {rate_eq:>8.3f} {rate_raw:>8.3f}"
        )

    worst = max(results, key=lambda r: abs(r.equilibrated_idn))
    lines.append("")
    lines.append(f"Largest |I_Dn| of the equilibrated stress: {abs(worst.equilibrated_idn):.3e} (level {worst.level}, gamma {worst.gamma:g})")
    return "\n".join(lines)


def format_verify_summary(rows: list[VerificationRow]) -> str:
    if not rows:
        return "No patches checked."
    lines = []
    for variant in sorted({r.test_spaces for r in rows}, key=lambda v: v.value):
        subset = [r for r in rows if r.test_spaces is variant]
        mismatched = [r.report.patch_id for r in subset if r.report.principal_angle is None]
        angles = [r.report.principal_angle for r in subset if r.report.principal_angle is not None]
        lines.append(f"## {variant.value} test spaces")
        lines.append(f"  patches: {len(subset)}  dimension mismatches: {len(mismatched)}")
        if mismatched:
            lines.append(f"  mismatched patches: {', '.join(str(p) for p in mismatched[:10])}")
        lines.append(f"  largest principal angle: {max(angles, default=0.0):.3e}")
        lines.append(f"  largest incompatibility naive: {max(r.incompat_naive for r in subset):.3e}")
        lines.append(f"  largest incompatibility compatible: {max(r.incompat_compatible for r in subset):.3e}")
    return "\n".join(lines)


def write_report_file(content: str, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(content, encoding="utf-8")
    log.info("Wrote report: %s", path)
    return path
