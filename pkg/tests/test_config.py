"""Tests for the config module."""

import math
import os
import tempfile

import pytest

from stresseq.config import RunConfig
from stresseq.models import CookBase, DualNorm, ProjectionMode, SpaceVariant


def _write(text: str) -> str:
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as f:
        f.write(text)
        return f.name


def test_defaults_are_valid():
    config = RunConfig()
    assert config.validate() == []
    assert config.mu == 1.0
    assert math.isinf(config.lam)
    assert config.projection_mode is ProjectionMode.COMPATIBLE
    assert config.base_mesh is CookBase.DIAGONAL
    assert config.dual_norm is DualNorm.NEUMANN_ZERO


def test_from_env(monkeypatch):
    monkeypatch.setenv("STRESSEQ_GAMMA", "0.5")
    monkeypatch.setenv("STRESSEQ_LEVELS", "3,4,5")
    monkeypatch.setenv("STRESSEQ_LAMBDA", "inf")
    monkeypatch.setenv("STRESSEQ_MODE", "naive")
    monkeypatch.setenv("STRESSEQ_STRICT", "true")
    config = RunConfig.from_env()
    assert config.gamma == 0.5
    assert config.levels == (3, 4, 5)
    assert math.isinf(config.lam)
    assert config.projection_mode is ProjectionMode.NAIVE
    assert config.strict is True


def test_from_file():
    path = _write("# Cook's membrane\ngamma = 0.05\nlambda = 1e3  # compressible\nmode = naive\nlevels = 2,3\n")
    try:
        config = RunConfig.from_file(path)
    finally:
        os.unlink(path)
    assert config.gamma == 0.05
    assert config.lam == 1000.0
    assert config.projection_mode is ProjectionMode.NAIVE
    assert config.levels == (2, 3)


def test_from_file_unknown_key():
    path = _write("gama = 0.2\n")
    try:
        with pytest.raises(ValueError, match="Unknown config key"):
            RunConfig.from_file(path)
    finally:
        os.unlink(path)


def test_from_file_malformed_line():
    path = _write("gamma 0.2\n")
    try:
        with pytest.raises(ValueError, match="expected 'key = value'"):
            RunConfig.from_file(path)
    finally:
        os.unlink(path)


def test_with_overrides_parses_strings_and_skips_none():
    config = RunConfig().with_overrides(gamma="0.3", levels="1,2", test_spaces="standard", out_dir=None)
    assert config.gamma == 0.3
    assert config.levels == (1, 2)
    assert config.test_spaces is SpaceVariant.STANDARD
    assert config.out_dir == "results"


def test_base_mesh_and_norm_parse_from_strings():
    config = RunConfig().with_overrides(base="Crossed", dual_norm="full")
    assert config.base_mesh is CookBase.CROSSED
    assert config.dual_norm is DualNorm.FULL
    with pytest.raises(ValueError):
        RunConfig().with_overrides(base_mesh="hexagonal")


def test_validate_levels():
    assert any("empty" in e for e in RunConfig(levels=()).validate())
    assert any("ascending" in e for e in RunConfig(levels=(4, 3)).validate())
    assert any(">= 0" in e for e in RunConfig(levels=(-1,)).validate())


def test_validate_material_and_load():
    errors = RunConfig(gamma=-0.1, mu=0.0, lam=-1.0).validate()
    assert len(errors) == 3


def test_load_schedule():
    assert RunConfig(gamma=0.2, load_steps=4).load_schedule() == pytest.approx([0.05, 0.1, 0.15, 0.2])
    assert RunConfig(gamma=0.0).load_schedule() == [0.0]
