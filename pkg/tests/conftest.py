import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cachefem.fem import Adiabatic, FixedTemperature, Material, Problem, SolverConfig
from cachefem.mesh import Mesh

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

UNIT_TET = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])


def unit_tet_mesh(tag=None):
    facets = np.array([[0, 1, 2]]) if tag else None
    tags = [tag] if tag else None
    return Mesh.from_arrays(UNIT_TET, np.array([[0, 1, 2, 3]]), np.array([0]), facets, tags)


def chain_mesh(n_tets):
    """``n_tets`` tets ``(i, i+1, i+2, i+3)`` on the moment curve: each
    shares one face with the next, so the dual graph is a path."""
    s = np.arange(n_tets + 3, dtype=float) / (n_tets + 3)
    nodes = np.column_stack([s, s ** 2, s ** 3])
    tets = np.array([[i, i + 1, i + 2, i + 3] for i in range(n_tets)])
    return Mesh.from_arrays(nodes, tets, np.zeros(n_tets, dtype=np.int64))


def two_tets_mesh():
    nodes = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    return Mesh.from_arrays(nodes, np.array([[0, 1, 2, 3], [1, 2, 3, 4]]), np.zeros(2, np.int64))


def unit_material(**kw):
    kw.setdefault("T0", 1.0)
    kw.setdefault("t_range", (-10.0, 10.0))
    return Material(1.0, 1.0, 1.0, **kw)


def insulated(mesh, material=None, config=None):
    mat = unit_material() if material is None else material
    conds = {tag: Adiabatic() for tag in mesh.tags()}
    return Problem(mesh, {int(r): mat for r in mesh.region_ids}, conds,
                   config or SolverConfig())


def rel_dev(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance summary: one line per criterion at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


__all__ = ["FixedTemperature", "UNIT_TET", "chain_mesh", "two_tets_mesh", "unit_tet_mesh",
           "unit_material", "insulated", "rel_dev", "ACCEPTANCE"]
