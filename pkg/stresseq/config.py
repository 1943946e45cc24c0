"""Run configuration loaded from environment variables, key=value files and flags."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields, replace
from pathlib import Path

from stresseq.models import CookBase, DualNorm, ProjectionMode, SpaceVariant

# Config-file keys that differ from the field names.
_KEY_ALIASES = {
    "lambda": "lam",
    "base": "base_mesh",
    "mode": "projection_mode",
    "out": "out_dir",
}


def _parse_float(raw: str) -> float:
    text = raw.strip().lower()
    if text in ("inf", "infinity", "+inf"):
        return math.inf
    return float(text)


def _parse_levels(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _parse_bool(raw: str) -> bool:
    return raw.strip().lower() in ("true", "1", "yes", "on")


@dataclass(frozen=True)
class RunConfig:
    # Load and meshes
    gamma: float = 0.2
    levels: tuple[int, ...] = (3,)
    base_mesh: CookBase = CookBase.DIAGONAL

    # Material (lam = inf is the incompressible limit)
    mu: float = 1.0
    lam: float = math.inf

    # Newton / load stepping
    load_steps: int = 4
    max_bisections: int = 3
    max_damping: int = 10
    newton_tol: float = 1e-10
    max_newton_iter: int = 30

    # Quadrature exactness degrees
    quad_degree_nonlinear: int = 8
    quad_degree_poly: int = 4

    # Equilibration
    projection_mode: ProjectionMode = ProjectionMode.COMPATIBLE
    test_spaces: SpaceVariant = SpaceVariant.MODIFIED
    rank_tol: float = 1e-10
    audit_tol: float = 1e-9
    strict: bool = False

    # Level differences are measured against P1 test functions vanishing on Gamma_N
    dual_norm: DualNorm = DualNorm.NEUMANN_ZERO

    # Output
    out_dir: str = "results"
    seed: int = 0
    log_level: str = "INFO"

    @classmethod
    def from_env(cls) -> RunConfig:
        env = os.environ
        return cls(
            gamma=_parse_float(env.get("STRESSEQ_GAMMA", "0.2")),
            levels=_parse_levels(env.get("STRESSEQ_LEVELS", "3")),
            base_mesh=CookBase(env.get("STRESSEQ_BASE_MESH", "diagonal")),
            mu=_parse_float(env.get("STRESSEQ_MU", "1.0")),
            lam=_parse_float(env.get("STRESSEQ_LAMBDA", "inf")),
            load_steps=int(env.get("STRESSEQ_LOAD_STEPS", "4")),
            projection_mode=ProjectionMode(env.get("STRESSEQ_MODE", "compatible")),
            test_spaces=SpaceVariant(env.get("STRESSEQ_TEST_SPACES", "modified")),
            strict=_parse_bool(env.get("STRESSEQ_STRICT", "")),
            dual_norm=DualNorm(env.get("STRESSEQ_DUAL_NORM", "neumann_zero")),
            out_dir=env.get("STRESSEQ_OUT", "results"),
            seed=int(env.get("STRESSEQ_SEED", "0")),
            log_level=env.get("STRESSEQ_LOG_LEVEL", "INFO"),
        )

    @classmethod
    def from_file(cls, path: str | Path, base: RunConfig | None = None) -> RunConfig:
        """Read a flat ``key = value`` file; ``#`` starts a comment."""
        values: dict[str, str] = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in text.split("=", 1))
            values[key] = raw
        return (base or cls()).with_overrides(**values)

    def with_overrides(self, **raw: object) -> RunConfig:
        """Return a copy with the given fields replaced; string values are parsed."""
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, value in raw.items():
            if value is None:
                continue
            name = _KEY_ALIASES.get(key, key)
            if name not in known:
                raise ValueError(f"Unknown config key: {key}")
            changes[name] = _coerce(name, value) if isinstance(value, str) else value
        return replace(self, **changes)

    def validate(self) -> list[str]:
        errors = []
        if not self.gamma >= 0:
            errors.append(f"gamma must be >= 0 (got {self.gamma})")
        if not self.levels:
            errors.append("levels must not be empty")
        elif any(level < 0 for level in self.levels):
            errors.append(f"levels must be >= 0 (got {self.levels})")
        elif any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            errors.append(f"levels must be strictly ascending (got {self.levels})")
        if not self.mu > 0:
            errors.append(f"mu must be > 0 (got {self.mu})")
        if not self.lam > 0:
            errors.append(f"lambda must be > 0 or inf (got {self.lam})")
        if self.load_steps < 1:
            errors.append("load_steps must be >= 1")
        if self.max_bisections < 0 or self.max_damping < 0:
            errors.append("max_bisections and max_damping must be >= 0")
        if self.quad_degree_poly < 4:
            errors.append("quad_degree_poly must be >= 4")
        if not self.quad_degree_poly <= self.quad_degree_nonlinear <= 20:
            errors.append("quad_degree_nonlinear must lie in [quad_degree_poly, 20]")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(f"unknown log_level {self.log_level!r}")
        return errors

    def load_schedule(self) -> list[float]:
        if self.gamma == 0:
            return [0.0]
        return [self.gamma * k / self.load_steps for k in range(1, self.load_steps + 1)]


def _coerce(name: str, raw: str) -> object:
    if name == "levels":
        return _parse_levels(raw)
    if name == "projection_mode":
        return ProjectionMode(raw.strip().lower())
    if name == "test_spaces":
        return SpaceVariant(raw.strip().lower())
    if name == "base_mesh":
        return CookBase(raw.strip().lower())
    if name == "dual_norm":
        return DualNorm(raw.strip().lower())
    if name == "strict":
        return _parse_bool(raw)
    if name in ("out_dir", "log_level"):
        return raw.strip()
    if name in ("gamma", "mu", "lam", "newton_tol", "rank_tol", "audit_tol"):
        return _parse_float(raw)
    return int(raw)
