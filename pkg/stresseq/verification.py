"""Brute-force checks of the adjoint null spaces of the patch operators."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from stresseq.equilibration import Equilibrator, LocalSystem, check_compatibility
from stresseq.hyperelastic import DisplacementPressureField
from stresseq.mesh import VertexPatch
from stresseq.models import NullSpaceReport, PatchKind, ProjectionMode, SpaceVariant

log = logging.getLogger(__name__)


def adjoint_null_basis(C: np.ndarray, rank_tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis (columns) of null(C^T) from a full SVD."""
    U, s, _ = sla.svd(C, full_matrices=True)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, rank:]


def adjoint_null_space(system: LocalSystem, rank_tol: float = 1e-10) -> NullSpaceReport:
    """Compare the computed null space of C^T with the rigid-mode prediction.

    The largest principal angle is reported only when the dimensions agree.
    """
    basis = adjoint_null_basis(system.C, rank_tol)
    computed = basis.shape[1]
    predicted = system.predicted_nullity
    angle = None
    if computed == predicted:
        angle = 0.0 if computed == 0 else float(np.max(sla.subspace_angles(basis, system.predicted.T)))
    return NullSpaceReport(
        patch_id=system.patch.center,
        kind=system.patch.kind,
        dim_computed=computed,
        dim_predicted=predicted,
        principal_angle=angle,
    )


def incompatibility_scan(
    fld: DisplacementPressureField,
    patches: list[VertexPatch],
    mode: ProjectionMode,
    variant: SpaceVariant = SpaceVariant.MODIFIED,
    quad_degree: int = 8,
) -> dict[int, float]:
    """Normalized pairing of each interior patch right-hand side with the rigid-mode null vectors."""
    equilibrator = Equilibrator(fld, patches, mode=mode, variant=variant, quad_degree=quad_degree)
    data = equilibrator.prepare()
    return {
        system.patch.center: check_compatibility(system)
        for system in equilibrator.systems(data)
        if system.patch.kind is PatchKind.INTERIOR
    }


@dataclass
class VerificationRow:
    report: NullSpaceReport
    incompat_naive: float
    incompat_compatible: float
    test_spaces: SpaceVariant

    def as_csv_row(self) -> list[str]:
        angle = self.report.principal_angle
        return [
            str(self.report.patch_id),
            self.report.kind.value,
            str(self.report.dim_computed),
            str(self.report.dim_predicted),
            repr(math.nan if angle is None else float(angle)),
            repr(float(self.incompat_naive)),
            repr(float(self.incompat_compatible)),
            self.test_spaces.value,
        ]


def verify_patches(
    fld: DisplacementPressureField,
    patches: list[VertexPatch],
    variants: tuple[SpaceVariant, ...] = (SpaceVariant.MODIFIED, SpaceVariant.STANDARD),
    quad_degree: int = 8,
    rank_tol: float = 1e-10,
) -> list[VerificationRow]:
    """Null-space oracle plus naive/compatible incompatibility for every patch and test-space variant."""
    rows: list[VerificationRow] = []
    for variant in variants:
        systems = {}
        for mode in (ProjectionMode.NAIVE, ProjectionMode.COMPATIBLE):
            equilibrator = Equilibrator(fld, patches, mode=mode, variant=variant, quad_degree=quad_degree)
            systems[mode] = equilibrator.systems(equilibrator.prepare())
        for naive, compatible in zip(systems[ProjectionMode.NAIVE], systems[ProjectionMode.COMPATIBLE]):
            report = adjoint_null_space(compatible, rank_tol)
            rows.append(
                VerificationRow(
                    report=report,
                    incompat_naive=check_compatibility(naive),
                    incompat_compatible=check_compatibility(compatible),
                    test_spaces=variant,
                )
            )
        mismatched = [r.report.patch_id for r in rows if r.test_spaces is variant and r.report.principal_angle is None]
        log.info(
            "[%s tests] %d patches checked, %d with a null-space dimension mismatch",
            variant.value,
            len(patches),
            len(mismatched),
        )
    return rows
