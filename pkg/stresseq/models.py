"""Data models for stresseq."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum


class BoundaryLabel(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class BoundarySide(IntEnum):
    """Segment markers of the Cook's membrane boundary."""

    INTERIOR = 0
    LEFT = 1  # clamped
    BOTTOM = 2
    RIGHT = 3  # loaded with g = (0, gamma)
    TOP = 4

    @property
    def label(self) -> BoundaryLabel | None:
        if self is BoundarySide.INTERIOR:
            return None
        if self is BoundarySide.LEFT:
            return BoundaryLabel.DIRICHLET
        return BoundaryLabel.NEUMANN


class CookBase(str, Enum):
    """Coarsest triangulation of the Cook's membrane quadrilateral."""

    DIAGONAL = "diagonal"  # 2 triangles cut along (0,0)-(0.48,0.6)
    CROSSED = "crossed"  # 4 triangles around the mean of the corners


class DualNorm(str, Enum):
    """Test space of the discrete H^-1/2(Gamma_D) norm."""

    FULL = "full"  # P2, H1(Omega) inner product, unconstrained
    NEUMANN_ZERO = "neumann_zero"  # P1 vanishing on Gamma_N, gradient inner product


class PatchKind(str, Enum):
    INTERIOR = "interior"
    DIRICHLET = "dirichlet"


class ProjectionMode(str, Enum):
    NAIVE = "naive"
    COMPATIBLE = "compatible"


class SpaceVariant(str, Enum):
    STANDARD = "standard"  # plain P1(T)^2 / P1(S)^2 test functions
    MODIFIED = "modified"  # rigid modes replaced by those of the deformed configuration


class EdgeSide(str, Enum):
    MINUS = "minus"
    PLUS = "plus"


class ArtifactKind(str, Enum):
    CHECKPOINT = "checkpoint"
    NEWTON = "newton"
    MESH = "mesh"
    MESH_VTK = "mesh_vtk"
    DEFORMED_VTK = "deformed_vtk"
    STRESS = "stress"
    STRESS_POINTS = "stress_points"
    AUDIT = "audit"
    VERIFY = "verify"
    PROFILE = "profile"


class ExitCode(IntEnum):
    OK = 0
    SOLVER_FAILURE = 1
    USAGE = 2
    AUDIT_FAILURE = 3


class ErrorCode(str, Enum):
    INVALID_MESH = "INVALID_MESH"
    NO_INTERIOR_NEIGHBOR = "NO_INTERIOR_NEIGHBOR"
    NONPOSITIVE_DET = "NONPOSITIVE_DET"
    NEWTON_DIVERGED = "NEWTON_DIVERGED"
    LINEAR_SOLVE_FAILED = "LINEAR_SOLVE_FAILED"
    RANK_DEFICIENT_CONSTRAINTS = "RANK_DEFICIENT_CONSTRAINTS"
    INCOMPATIBLE_RHS = "INCOMPATIBLE_RHS"
    SINGULAR_MASS = "SINGULAR_MASS"
    NULLSPACE_MISMATCH = "NULLSPACE_MISMATCH"
    AUDIT_FAILED = "AUDIT_FAILED"
    MISSING_ARTIFACT = "MISSING_ARTIFACT"
    CHECKPOINT_MISMATCH = "CHECKPOINT_MISMATCH"


class StressEqError(RuntimeError):
    """Base error carrying a machine-readable code and optional detail."""

    def __init__(self, code: ErrorCode, message: str, detail: dict | None = None):
        super().__init__(f"{code.value}: {message}")
        self.code = code
        self.detail = detail or {}


class MeshError(StressEqError):
    """Raised when a triangulation violates the patch construction requirements."""


class SolverError(StressEqError):
    """Raised when the Newton solver or its linear solves fail."""


class ProjectionError(StressEqError):
    """Raised when an element-wise constrained projection cannot be formed."""


class LocalSolveError(StressEqError):
    """Raised by vertex-patch solves."""


class AuditError(StressEqError):
    """Raised in strict mode when reconstruction residuals exceed tolerance."""


class ArtifactError(StressEqError):
    """Raised when an expected result file is missing or inconsistent."""


@dataclass
class NewtonReport:
    gamma: float
    load_steps: list[float] = field(default_factory=list)
    iterations: list[int] = field(default_factory=list)
    residuals: list[list[float]] = field(default_factory=list)
    bisections: int = 0

    @property
    def total_iterations(self) -> int:
        return sum(self.iterations)

    @property
    def final_residual(self) -> float:
        for history in reversed(self.residuals):
            if history:
                return history[-1]
        return 0.0


@dataclass
class Artifact:
    id: int | None
    level: int
    gamma: float
    kind: ArtifactKind
    path: str
    mesh_hash: str
    mode: str = ""
    created_at: str | None = None


@dataclass
class NullSpaceReport:
    patch_id: int
    kind: PatchKind
    dim_computed: int
    dim_predicted: int
    principal_angle: float | None = None  # only when dimensions match


@dataclass
class AuditReport:
    divergence: float
    jump: float
    neumann: float
    neumann_resultant: float
    symmetry: float
    rigid_balance: float
    scale: float

    def families(self) -> dict[str, float]:
        return {
            "divergence": self.divergence,
            "jump": self.jump,
            "neumann": self.neumann,
            "neumann_resultant": self.neumann_resultant,
            "symmetry": self.symmetry,
            "rigid_balance": self.rigid_balance,
        }

    def violations(self, tol: float) -> list[str]:
        limit = tol * self.scale
        return [
            f"{name} residual {value:.3e} exceeds {limit:.3e}"
            for name, value in self.families().items()
            if not value <= limit
        ]
