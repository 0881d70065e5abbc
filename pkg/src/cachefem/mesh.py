"""Unstructured tetrahedral meshes with decoupled regions and tagged facets.

A mesh holds one or more regions (cast, mold, chills, ...) that are meshed
independently and therefore share no nodes. Boundary facets carry a string
tag; a ``contact tagA tagB`` declaration marks two tags as the two sides of
a physical interface. Heat crosses such an interface through a convective
coupling to the nearest ("sister") element on the other side, so the two
facet grids do not need to match.

File format (ASCII, ``#`` starts a comment, indices are 0-based)::

    femesh 1
    nodes N
    x y z            (N lines)
    tets M
    n0 n1 n2 n3 region   (M lines)
    facets B
    n0 n1 n2 tag     (B lines)
    contact tagA tagB
"""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, TextIO

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import (
    ConfigurationError,
    DegenerateElementError,
    MeshParseError,
    MeshValidationError,
)

VOLUME_EPS = 1e-12

# local face k of a tet is opposite to local node k
TET_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
TET_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])


def tet_geometry(points):
    """Volume and constant shape-function gradients of one linear tetrahedron.

    Parameters
    ----------
    points : array_like, shape (4, 3)
        Vertex coordinates in the element's node order.

    Returns
    -------
    volume : float
        Signed volume; positive for a correctly oriented element.
    grads : ndarray, shape (4, 3)
        ``grads[a]`` is the gradient of the shape function of node ``a``.
    """
    vol, grads = tet_geometry_batch(np.asarray(points, dtype=float)[None])
    if not vol[0] > 0.0:
        raise DegenerateElementError(0, "non-positive volume")
    return float(vol[0]), grads[0]


def tet_geometry_batch(X):
    """Vectorised :func:`tet_geometry` over an ``(ne, 4, 3)`` coordinate stack.

    Degenerate elements (volume below ``1e-12 * longest_edge**3``) raise
    :class:`DegenerateElementError`; negative volumes are returned as-is so
    the caller can fix orientation.
    """
    X = np.asarray(X, dtype=float)
    E = X[:, 1:, :] - X[:, :1, :]
    det = np.linalg.det(E)
    vol = det / 6.0
    lmax = longest_edge(X)
    bad = np.abs(vol) <= VOLUME_EPS * lmax**3
    if bad.any():
        raise DegenerateElementError(int(np.flatnonzero(bad)[0]))
    inv = np.linalg.inv(E)
    grads = np.empty_like(X)
    # d(xi_i)/dx is column i of inv(E)
    grads[:, 1:, :] = np.swapaxes(inv, 1, 2)
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return vol, grads


def edge_lengths(X):
    X = np.asarray(X, dtype=float)
    d = X[:, TET_EDGES[:, 0], :] - X[:, TET_EDGES[:, 1], :]
    return np.sqrt((d * d).sum(axis=2))


def longest_edge(X):
    return edge_lengths(X).max(axis=1)


def shortest_edge(X):
    return edge_lengths(X).min(axis=1)


def triangle_area(P):
    """Areas of triangles given as ``(nf, 3, 3)`` coordinates."""
    P = np.asarray(P, dtype=float)
    c = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    return 0.5 * np.sqrt((c * c).sum(axis=1))


def _face_keys(faces, n_nodes):
    f = np.sort(np.asarray(faces, dtype=np.int64), axis=1)
    n = np.int64(n_nodes)
    return (f[:, 0] * n + f[:, 1]) * n + f[:, 2]


@dataclass(eq=False)
class Mesh:
    """Validated tetrahedral mesh.

    ``tets`` are stored positively oriented; :meth:`from_arrays` swaps two
    nodes of any inverted element. The instance is treated as immutable
    once built.
    """

    nodes: np.ndarray
    tets: np.ndarray
    regions: np.ndarray
    facets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    facet_tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=object))
    contacts: list = field(default_factory=list)
    facet_owner: np.ndarray = None

    @classmethod
    def from_arrays(cls, nodes, tets, regions, facets=None, facet_tags=None,
                    contacts=(), fix_orientation=True):
        nodes = np.ascontiguousarray(nodes, dtype=float).reshape(-1, 3)
        tets = np.array(tets, dtype=np.int64).reshape(-1, 4)
        regions = np.asarray(regions, dtype=np.int64).reshape(-1)
        facets = (np.zeros((0, 3), dtype=np.int64) if facets is None
                  else np.array(facets, dtype=np.int64).reshape(-1, 3))
        if facet_tags is None:
            facet_tags = np.zeros(0, dtype=object)
        facet_tags = np.array([str(t) for t in facet_tags], dtype=object)
        contacts = [(str(a), str(b)) for a, b in contacts]
        _validate_topology(nodes, tets, regions, facets, facet_tags)

        X = nodes[tets]
        vol, _ = tet_geometry_batch(X)
        if fix_orientation:
            neg = vol < 0
            tets[neg, 1], tets[neg, 2] = tets[neg, 2].copy(), tets[neg, 1].copy()
        elif (vol < 0).any():
            raise DegenerateElementError(int(np.flatnonzero(vol < 0)[0]),
                                         "negative volume")

        owner = _facet_owners(nodes.shape[0], tets, facets)
        mesh = cls(nodes, tets, regions, facets, facet_tags, contacts, owner)
        _validate_regions(mesh)
        return mesh

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_elements(self):
        return self.tets.shape[0]

    @property
    def n_facets(self):
        return self.facets.shape[0]

    @property
    def region_ids(self):
        return np.unique(self.regions)

    def node_region(self):
        """Region id of every node (regions are node-disjoint)."""
        out = np.empty(self.n_nodes, dtype=np.int64)
        out[self.tets.ravel()] = np.repeat(self.regions, 4)
        return out

    def volumes(self):
        vol, _ = tet_geometry_batch(self.nodes[self.tets])
        return vol

    def facet_centroids(self, idx=None):
        f = self.facets if idx is None else self.facets[idx]
        return self.nodes[f].mean(axis=1)

    def element_centroids(self, idx=None):
        t = self.tets if idx is None else self.tets[idx]
        return self.nodes[t].mean(axis=1)

    def facets_with_tag(self, tag):
        return np.flatnonzero(self.facet_tags == tag)

    def tags(self):
        return sorted(set(self.facet_tags.tolist()))


def _validate_topology(nodes, tets, regions, facets, facet_tags):
    n = nodes.shape[0]
    if not np.isfinite(nodes).all():
        raise MeshValidationError("non-finite node coordinates")
    if regions.shape[0] != tets.shape[0]:
        raise MeshValidationError("one region id per element required")
    if facet_tags.shape[0] != facets.shape[0]:
        raise MeshValidationError("one tag per facet required")
    for name, arr in (("tet", tets), ("facet", facets)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            row = int(np.flatnonzero(((arr < 0) | (arr >= n)).any(axis=1))[0])
            raise MeshValidationError(
                f"{name} {row} references a node outside [0, {n})")
    s = np.sort(tets, axis=1)
    if (s[:, 1:] == s[:, :-1]).any():
        row = int(np.flatnonzero((s[:, 1:] == s[:, :-1]).any(axis=1))[0])
        raise MeshValidationError(f"tet {row} repeats a node")
    used = np.zeros(n, dtype=bool)
    used[tets.ravel()] = True
    if not used.all():
        raise MeshValidationError(
            f"node {int(np.flatnonzero(~used)[0])} is not used by any element")


def _validate_regions(mesh):
    nr = np.full(mesh.n_nodes, -1, dtype=np.int64)
    for r in mesh.region_ids:
        nodes = np.unique(mesh.tets[mesh.regions == r])
        clash = nodes[nr[nodes] >= 0]
        if clash.size:
            raise MeshValidationError(
                f"node {int(clash[0])} is shared by regions {int(nr[clash[0]])} and {int(r)}")
        nr[nodes] = r
    tags = set(mesh.facet_tags.tolist())
    for a, b in mesh.contacts:
        if a not in tags or b not in tags:
            missing = a if a not in tags else b
            raise ConfigurationError(
                f"contact {a}/{b}: no facets tagged {missing!r}")


def _facet_owners(n_nodes, tets, facets):
    if facets.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    faces = tets[:, TET_FACES].reshape(-1, 3)
    keys = _face_keys(faces, n_nodes)
    order = np.argsort(keys, kind="stable")
    skeys = keys[order]
    fkeys = _face_keys(facets, n_nodes)
    pos = np.searchsorted(skeys, fkeys)
    pos_c = np.minimum(pos, skeys.size - 1)
    found = skeys[pos_c] == fkeys
    if not found.all():
        bad = int(np.flatnonzero(~found)[0])
        raise MeshValidationError(f"facet {bad} is not a face of any element")
    # a boundary facet must belong to exactly one element
    nxt = np.minimum(pos_c + 1, skeys.size - 1)
    dup = (nxt != pos_c) & (skeys[nxt] == fkeys)
    if dup.any():
        bad = int(np.flatnonzero(dup)[0])
        raise MeshValidationError(f"facet {bad} is an interior face")
    return order[pos_c] // 4


# ---------------------------------------------------------------------------
# I/O


def _data_lines(stream):
    for lineno, raw in enumerate(stream, start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def parse_mesh(stream: TextIO | Iterable[str]) -> Mesh:
    """Read a mesh in the ``femesh 1`` format and validate it."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    lines = _data_lines(stream)

    def expect_count(keyword):
        try:
            lineno, tok = next(lines)
        except StopIteration:
            raise MeshParseError("EOF", f"expected '{keyword} <count>'") from None
        if len(tok) != 2 or tok[0] != keyword:
            raise MeshParseError(lineno, f"expected '{keyword} <count>'")
        try:
            count = int(tok[1])
        except ValueError:
            raise MeshParseError(lineno, f"bad count {tok[1]!r}") from None
        if count < 0:
            raise MeshParseError(lineno, "negative count")
        return count

    try:
        lineno, tok = next(lines)
    except StopIteration:
        raise MeshParseError(1, "empty mesh file") from None
    if tok != ["femesh", "1"]:
        raise MeshParseError(lineno, "header must be 'femesh 1'")

    def read_rows(count, width, conv, what):
        rows = []
        for _ in range(count):
            try:
                lineno, tok = next(lines)
            except StopIteration:
                raise MeshParseError("EOF", f"truncated {what} section") from None
            if len(tok) != width:
                raise MeshParseError(lineno, f"{what} line needs {width} fields")
            try:
                rows.append(conv(tok))
            except ValueError as exc:
                raise MeshParseError(lineno, f"bad {what} line: {exc}") from None
        return rows

    n = expect_count("nodes")
    nodes = read_rows(n, 3, lambda t: [float(v) for v in t], "node")
    m = expect_count("tets")
    tets = read_rows(m, 5, lambda t: [int(v) for v in t], "tet")
    b = expect_count("facets")
    facets = read_rows(b, 4, lambda t: ([int(v) for v in t[:3]], t[3]), "facet")
    contacts = []
    for lineno, tok in lines:
        if tok[0] != "contact" or len(tok) != 3:
            raise MeshParseError(lineno, "expected 'contact tagA tagB'")
        contacts.append((tok[1], tok[2]))

    tets = np.array(tets, dtype=np.int64).reshape(-1, 5)
    return Mesh.from_arrays(
        np.array(nodes, dtype=float).reshape(-1, 3),
        tets[:, :4],
        tets[:, 4],
        np.array([f[0] for f in facets], dtype=np.int64).reshape(-1, 3),
        [f[1] for f in facets],
        contacts,
    )


def read_mesh(path) -> Mesh:
    with open(path) as fh:
        return parse_mesh(fh)


def write_mesh(mesh: Mesh, stream: TextIO):
    w = stream.write
    w("femesh 1\n")
    w(f"nodes {mesh.n_nodes}\n")
    # tolist() gives Python floats, whose repr round-trips exactly
    for x, y, z in mesh.nodes.tolist():
        w(f"{x!r} {y!r} {z!r}\n")
    w(f"tets {mesh.n_elements}\n")
    for t, r in zip(mesh.tets.tolist(), mesh.regions.tolist()):
        w(f"{t[0]} {t[1]} {t[2]} {t[3]} {r}\n")
    w(f"facets {mesh.n_facets}\n")
    for f, tag in zip(mesh.facets.tolist(), mesh.facet_tags):
        w(f"{f[0]} {f[1]} {f[2]} {tag}\n")
    for a, b in mesh.contacts:
        w(f"contact {a} {b}\n")


def save_mesh(mesh: Mesh, path):
    with open(path, "w") as fh:
        write_mesh(mesh, fh)


# ---------------------------------------------------------------------------
# Graphs


def boundary_faces(tets, n_nodes):
    """Faces that belong to exactly one element, as ``(faces, owner)``."""
    faces = tets[:, TET_FACES].reshape(-1, 3)
    keys = _face_keys(faces, n_nodes)
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    once = counts[inv] == 1
    idx = np.flatnonzero(once)
    return faces[idx], idx // 4


def build_dual_graph(mesh: Mesh) -> sp.csr_matrix:
    """Element adjacency: elements are linked when they share a triangle.

    Returns a symmetric CSR matrix with unit entries. Faces shared by more
    than two elements make the mesh non-manifold and are rejected.
    """
    m = mesh.n_elements
    faces = mesh.tets[:, TET_FACES].reshape(-1, 3)
    keys = _face_keys(faces, mesh.n_nodes)
    order = np.argsort(keys, kind="stable")
    sk = keys[order]
    same = sk[1:] == sk[:-1]
    if (same[1:] & same[:-1]).any():
        raise MeshValidationError("face shared by more than two elements")
    i = order[:-1][same] // 4
    j = order[1:][same] // 4
    return _sym_graph(i, j, m)


def _sym_graph(i, j, n):
    rows = np.concatenate([i, j])
    cols = np.concatenate([j, i])
    g = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)), shape=(n, n))
    g.sum_duplicates()
    g.data[:] = 1
    return g


def build_node_graph(mesh: Mesh) -> sp.csr_matrix:
    """Node adjacency (two nodes linked iff they share an element edge)."""
    e = mesh.tets[:, TET_EDGES].reshape(-1, 2)
    return _sym_graph(e[:, 0], e[:, 1], mesh.n_nodes)


# ---------------------------------------------------------------------------
# Interface pairing


@dataclass(frozen=True)
class SisterPairing:
    """Interface facets and the element across the contact that they see.

    Arrays are aligned: ``facet[i]`` (a boundary facet index) is paired with
    element ``sister[i]`` of the other region, through contact
    ``contact[i]`` (index into ``mesh.contacts``). ``side[i]`` is 0 when the
    facet carries the first tag of the contact declaration (the side that
    receives virtual elements for partitioning), 1 otherwise.
    """

    facet: np.ndarray
    sister: np.ndarray
    contact: np.ndarray
    side: np.ndarray
    distance: np.ndarray

    def __len__(self):
        return int(self.facet.size)

    @classmethod
    def empty(cls):
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z, z, z, np.zeros(0))


def nearest_with_ties(tree_points, owners, queries, rtol=1e-12):
    """Index of the nearest point per query; equidistant ties go to the
    candidate with the lowest owner id."""
    n = tree_points.shape[0]
    k = min(8, n)
    tree = cKDTree(tree_points)
    dist, idx = tree.query(queries, k=k)
    if k == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    tol = rtol * np.maximum(dist[:, :1], 1.0)
    tied = dist <= dist[:, :1] + tol
    cand_owner = np.where(tied, owners[idx], np.iinfo(np.int64).max)
    pick = np.argmin(cand_owner, axis=1)
    rows = np.arange(queries.shape[0])
    return idx[rows, pick], dist[rows, pick]


def pair_sister_facets(mesh: Mesh) -> SisterPairing:
    """Pair every interface facet with the nearest element across its contact.

    Distance is measured between facet centroids, over the facets carrying
    the partner tag; the sister is the owner element of the closest partner
    facet. Pairing is done in both directions and is meant to be computed
    once, before time stepping.
    """
    if not mesh.contacts:
        return SisterPairing.empty()
    cents = mesh.facet_centroids()
    out = {k: [] for k in ("facet", "sister", "contact", "side", "distance")}
    for ci, (ta, tb) in enumerate(mesh.contacts):
        fa = mesh.facets_with_tag(ta)
        fb = mesh.facets_with_tag(tb)
        if fa.size == 0 or fb.size == 0:
            missing = ta if fa.size == 0 else tb
            raise ConfigurationError(f"contact {ta}/{tb}: no facets tagged {missing!r}")
        for side, (src, dst) in enumerate(((fa, fb), (fb, fa))):
            owners = mesh.facet_owner[dst]
            j, d = nearest_with_ties(cents[dst], owners, cents[src])
            sister = owners[j]
            if (mesh.regions[sister] == mesh.regions[mesh.facet_owner[src]]).any():
                raise ConfigurationError(
                    f"contact {ta}/{tb}: both sides lie in the same region")
            out["facet"].append(src)
            out["sister"].append(sister)
            out["contact"].append(np.full(src.size, ci, dtype=np.int64))
            out["side"].append(np.full(src.size, side, dtype=np.int64))
            out["distance"].append(d)
    cat = {k: np.concatenate(v) for k, v in out.items()}
    order = np.argsort(cat["facet"], kind="stable")
    return SisterPairing(**{k: v[order] for k, v in cat.items()})
