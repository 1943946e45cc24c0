"""Shared meshes and solutions; the level-2 solve is reused across modules."""

import pytest

from stresseq.equilibration import Equilibrator
from stresseq.hyperelastic import MaterialParams, solve_newton
from stresseq.mesh import build_cook_mesh, build_patches
from stresseq.models import ProjectionMode


@pytest.fixture(scope="session")
def mesh1():
    return build_cook_mesh(1)


@pytest.fixture(scope="session")
def mesh2():
    return build_cook_mesh(2)


@pytest.fixture(scope="session")
def patches2(mesh2):
    return build_patches(mesh2)


@pytest.fixture(scope="session")
def solved2(mesh2):
    return solve_newton(mesh2, MaterialParams(), 0.2)


@pytest.fixture(scope="session")
def reconstruction2(solved2, patches2):
    return Equilibrator(solved2, patches2, mode=ProjectionMode.COMPATIBLE, strict=True).run()
