"""Synthetic tetrahedral fixtures: cubes, bars and cast-in-mold boxes.

Every generator splits hexahedral cells into six tetrahedra that share the
cell's main diagonal (Kuhn subdivision), which gives a conforming,
non-obtuse mesh. Regions are meshed independently, so a cast and its mold
share no nodes and may have non-matching facet grids.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .fem import Adiabatic, Convection, FixedTemperature, InterfaceCondition, Material, \
    Problem, SolverConfig
from .mesh import Mesh, boundary_faces

_KUHN = [list(p) for p in itertools.permutations(range(3))]


def kuhn_box(shape, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), keep=None):
    """Tetrahedralise a box of ``shape`` cells.

    ``keep`` is an optional boolean array of the cell shape selecting which
    cells to mesh. Unused nodes are dropped. Returns ``(nodes, tets)``.
    """
    nx, ny, nz = shape
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    ax = [np.linspace(lo[d], hi[d], s + 1) for d, s in enumerate(shape)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    nodes = np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def nid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    I, J, K = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    I, J, K = I.ravel(), J.ravel(), K.ravel()
    if keep is not None:
        sel = np.asarray(keep, dtype=bool).ravel()
        I, J, K = I[sel], J[sel], K[sel]
    tets = []
    for perm in _KUHN:
        off = np.zeros(3, dtype=np.int64)
        verts = [nid(I, J, K)]
        for axis in perm:
            off[axis] += 1
            verts.append(nid(I + off[0], J + off[1], K + off[2]))
        tets.append(np.column_stack(verts))
    # cell-major element order
    tets = np.stack(tets, axis=1).reshape(-1, 4)
    used = np.unique(tets)
    remap = np.full(nodes.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return nodes[used], remap[tets]


def _tag_faces(nodes, tets, rules):
    """Boundary faces whose centroid satisfies a rule get that rule's tag;
    the first matching rule wins, unmatched faces stay untagged."""
    faces, _ = boundary_faces(tets, nodes.shape[0])
    cent = nodes[faces].mean(axis=1)
    tags = np.full(faces.shape[0], None, dtype=object)
    for tag, pred in rules:
        hit = (tags == None) & pred(cent)  # noqa: E711
        tags[hit] = tag
    keep = tags != None  # noqa: E711
    return faces[keep], tags[keep]


def _on(axis, value, tol=1e-9):
    return lambda c: np.abs(c[:, axis] - value) < tol


def _shuffle(mesh_args, seed):
    nodes, tets, regions, facets, tags, contacts = mesh_args
    rng = np.random.default_rng(seed)
    p = rng.permutation(nodes.shape[0])
    new_nodes = np.empty_like(nodes)
    new_nodes[p] = nodes
    return new_nodes, p[tets], regions, p[facets], tags, contacts


def cube(n=1, size=1.0, tag="wall"):
    """Unit cube of ``n**3`` cells (``6 n**3`` tets), all faces tagged."""
    nodes, tets = kuhn_box((n, n, n), hi=(size,) * 3)
    facets, tags = _tag_faces(nodes, tets, [(tag, lambda c: np.ones(c.shape[0], bool))])
    return Mesh.from_arrays(nodes, tets, np.zeros(len(tets), dtype=np.int64), facets, tags)


def bar(nx, length=1.0, width=None, ny=1, nz=1, left="left", right="right"):
    """Prism ``[0, length] x [0, w]^2`` of tets along x; only the two end
    faces are tagged, the lateral surface is left adiabatic."""
    width = length / nx if width is None else width
    nodes, tets = kuhn_box((nx, ny, nz), hi=(length, width * ny, width * nz))
    facets, tags = _tag_faces(nodes, tets, [(left, _on(0, 0.0)), (right, _on(0, length))])
    return Mesh.from_arrays(nodes, tets, np.zeros(len(tets), dtype=np.int64), facets, tags)


def two_cubes(n=2, refine=1):
    """Cube ``[0,1]^3`` (region 0) touching cube ``[1,2]x[0,1]^2`` (region 1)
    at ``x = 1``; the second cube has ``refine`` times more cells per side."""
    n0, t0 = kuhn_box((n, n, n))
    m = n * refine
    n1, t1 = kuhn_box((m, m, m), lo=(1.0, 0.0, 0.0), hi=(2.0, 1.0, 1.0))
    f0, g0 = _tag_faces(n0, t0, [("a", _on(0, 1.0))])
    f1, g1 = _tag_faces(n1, t1, [("b", _on(0, 1.0))])
    off = n0.shape[0]
    return Mesh.from_arrays(
        np.vstack([n0, n1]), np.vstack([t0, t1 + off]),
        np.concatenate([np.zeros(len(t0), np.int64), np.ones(len(t1), np.int64)]),
        np.vstack([f0, f1 + off]), np.concatenate([g0, g1]), [("a", "b")])


def cast_in_mold_mesh(n=4, pad=1, refine=1, cast_size=1.0, shuffle=True, seed=0):
    """Cast cube of ``n`` cells per side inside a mold shell ``pad`` cast
    cells thick. The mold grid is ``refine`` times finer than the cast
    grid. Tags: ``cast_if``/``mold_if`` on the contact, ``mold_out`` outside.

    With ``shuffle`` the node numbering is randomly permuted (seeded), as
    produced by an unstructured mesh generator.
    """
    if n < 1 or pad < 1 or refine < 1:
        raise ConfigurationError("n, pad and refine must be >= 1")
    h = cast_size / n
    lo_c = np.full(3, pad * h)
    hi_c = lo_c + cast_size
    nc, tc = kuhn_box((n, n, n), lo=lo_c, hi=hi_c)
    m = refine * (n + 2 * pad)
    L = cast_size + 2 * pad * h
    cells = np.arange(m)
    inside = (cells >= refine * pad) & (cells < refine * (pad + n))
    hollow = inside[:, None, None] & inside[None, :, None] & inside[None, None, :]
    nm, tm = kuhn_box((m, m, m), hi=(L, L, L), keep=~hollow)

    def on_box(lo, hi):
        def pred(c):
            within = np.all((c >= lo - 1e-9) & (c <= hi + 1e-9), axis=1)
            face = np.any((np.abs(c - lo) < 1e-9) | (np.abs(c - hi) < 1e-9), axis=1)
            return within & face
        return pred

    fc, gc = _tag_faces(nc, tc, [("cast_if", lambda c: np.ones(c.shape[0], bool))])
    fm, gm = _tag_faces(nm, tm, [("mold_if", on_box(lo_c, hi_c)),
                                 ("mold_out", lambda c: np.ones(c.shape[0], bool))])
    off = nc.shape[0]
    args = (np.vstack([nc, nm]), np.vstack([tc, tm + off]),
            np.concatenate([np.zeros(len(tc), np.int64), np.ones(len(tm), np.int64)]),
            np.vstack([fc, fm + off]), np.concatenate([gc, gm]), [("cast_if", "mold_if")])
    if shuffle:
        args = _shuffle(args, seed)
    return Mesh.from_arrays(*args)


# ---------------------------------------------------------------------------
# Problems


def casting_materials(latent=True):
    """Aluminium-like cast and sand-like mold, SI units."""
    cast = Material(
        rho=2700.0,
        c=[(300.0, 900.0), (933.0, 1100.0), (1100.0, 1150.0)],
        k=[(300.0, 230.0), (900.0, 210.0), (933.0, 95.0), (1100.0, 100.0)],
        latent_heat=3.9e5 if latent else 0.0,
        solidus=900.0, liquidus=933.0, T0=1000.0, t_range=(250.0, 1200.0))
    mold = Material(rho=1500.0, c=[(300.0, 1000.0), (1100.0, 1200.0)],
                    k=[(300.0, 0.6), (1100.0, 0.9)], T0=300.0, t_range=(250.0, 1200.0))
    return {0: cast, 1: mold}


def cast_in_mold_problem(n=4, pad=1, refine=1, cast_size=0.1, shuffle=True, seed=0,
                         h_interface=1500.0, h_out=20.0, latent=True, safety=0.5):
    mesh = cast_in_mold_mesh(n, pad, refine, cast_size, shuffle, seed)
    conds = {
        "cast_if": InterfaceCondition(h_interface),
        "mold_if": InterfaceCondition(h_interface),
        "mold_out": Convection(q=0.0, h=h_out, T_inf=300.0),
    }
    return Problem(mesh, casting_materials(latent), conds, SolverConfig(safety=safety))


@dataclass
class FixtureSpec:
    """Parameters of a synthetic fixture.

    ``kind`` is one of ``cube``, ``bar``, ``two_cubes`` or
    ``cast_in_mold``; ``n`` counts cells per side (cast side for
    ``cast_in_mold``), ``refine`` is the mold-to-cast cell ratio.
    """

    kind: str = "cast_in_mold"
    n: int = 4
    pad: int = 1
    refine: int = 1
    shuffle: bool = True
    seed: int = 0
    latent: bool = True
    name: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.name or f"{self.kind}-n{self.n}-r{self.refine}"


@dataclass
class Fixture:
    spec: FixtureSpec
    problem: Problem

    @property
    def mesh(self):
        return self.problem.mesh


def generate_fixture(spec: FixtureSpec) -> Fixture:
    if spec.n < 1 or spec.n > 200:
        raise ConfigurationError("n must lie in [1, 200]")
    if spec.kind == "cast_in_mold":
        prob = cast_in_mold_problem(spec.n, spec.pad, spec.refine, shuffle=spec.shuffle,
                                    seed=spec.seed, latent=spec.latent, **spec.extra)
    elif spec.kind == "cube":
        mesh = cube(spec.n)
        mat = Material(1.0, 1.0, 1.0, T0=1.0, t_range=(0.0, 2.0))
        prob = Problem(mesh, {0: mat}, {"wall": FixedTemperature(0.0)})
    elif spec.kind == "bar":
        mesh = bar(spec.n)
        mat = Material(1.0, 1.0, 1.0, T0=1.0, t_range=(0.0, 2.0))
        prob = Problem(mesh, {0: mat}, {"left": FixedTemperature(0.0),
                                        "right": FixedTemperature(0.0)})
    elif spec.kind == "two_cubes":
        mesh = two_cubes(spec.n, spec.refine)
        hot = Material(1.0, 1.0, 1.0, T0=1.0, t_range=(0.0, 2.0))
        cold = Material(1.0, 1.0, 1.0, T0=0.0, t_range=(0.0, 2.0))
        prob = Problem(mesh, {0: hot, 1: cold},
                       {"a": InterfaceCondition(10.0), "b": InterfaceCondition(10.0)})
    else:
        raise ConfigurationError(f"unknown fixture kind {spec.kind!r}")
    return Fixture(spec, prob)


def adiabatic(problem: Problem) -> Problem:
    """Same mesh and materials with every tagged boundary insulated and
    contacts kept."""
    conds = {tag: (bc if isinstance(bc, InterfaceCondition) else Adiabatic())
             for tag, bc in problem.conditions.items()}
    return Problem(problem.mesh, problem.materials, conds, problem.config, problem.pairing)
