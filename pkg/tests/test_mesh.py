import io

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from cachefem.errors import (ConfigurationError, DegenerateElementError, MeshParseError,
                             MeshValidationError)
from cachefem.fixtures import cube, two_cubes
from cachefem.mesh import (Mesh, build_dual_graph, build_node_graph, pair_sister_facets,
                           parse_mesh, tet_geometry, tet_geometry_batch, write_mesh)

from conftest import UNIT_TET, two_tets_mesh
from oracles import brute_face_adjacency

UNIT_TET_TEXT = """femesh 1
# reference tetrahedron
nodes 4
0 0 0
1 0 0
0 1 0
0 0 1
tets 1
0 1 2 3 0
facets 1
0 1 2 bottom
"""


def test_parse_unit_tet():
    m = parse_mesh(UNIT_TET_TEXT)
    assert m.n_nodes == 4 and m.n_elements == 1
    assert m.volumes()[0] == pytest.approx(1 / 6)
    assert m.facet_tags.tolist() == ["bottom"]
    assert m.facet_owner.tolist() == [0]


def test_parse_dangling_node():
    text = UNIT_TET_TEXT.replace("0 1 2 3 0", "0 1 2 99 0")
    with pytest.raises(MeshValidationError, match="99|outside"):
        parse_mesh(text)


@pytest.mark.parametrize("bad, line", [
    ("0 0 0\n1 0 0\n0 1 0\n0 0 x\n", 7),
    ("0 0 0\n1 0 0\n0 1 0\n", 7),
])
def test_parse_error_has_line_number(bad, line):
    text = UNIT_TET_TEXT.replace("0 0 0\n1 0 0\n0 1 0\n0 0 1\n", bad)
    with pytest.raises(MeshParseError) as exc:
        parse_mesh(text)
    assert exc.value.lineno == line


def test_parse_bad_header():
    with pytest.raises(MeshParseError):
        parse_mesh("femesh 2\nnodes 0\n")


def test_inverted_element_is_fixed():
    tets = np.array([[0, 2, 1, 3]])
    m = Mesh.from_arrays(UNIT_TET, tets, [0])
    assert m.volumes()[0] == pytest.approx(1 / 6)


def test_degenerate_element():
    flat = UNIT_TET.copy()
    flat[3] = [0.3, 0.3, 0.0]
    with pytest.raises(DegenerateElementError):
        Mesh.from_arrays(flat, [[0, 1, 2, 3]], [0])


def test_unused_node_and_repeated_node():
    with pytest.raises(MeshValidationError):
        Mesh.from_arrays(np.vstack([UNIT_TET, [[5, 5, 5]]]), [[0, 1, 2, 3]], [0])
    with pytest.raises(MeshValidationError):
        Mesh.from_arrays(UNIT_TET, [[0, 1, 1, 3]], [0])


def test_two_cube_fixture_regions_disjoint():
    m = two_cubes(2)
    assert sorted(m.region_ids.tolist()) == [0, 1]
    a = set(np.unique(m.tets[m.regions == 0]).tolist())
    b = set(np.unique(m.tets[m.regions == 1]).tolist())
    assert a and b and not (a & b)


def test_regions_sharing_node_rejected():
    nodes = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]])
    with pytest.raises(MeshValidationError, match="shared by regions"):
        Mesh.from_arrays(nodes, [[0, 1, 2, 3], [1, 2, 3, 4]], [0, 1])


def test_roundtrip_is_idempotent():
    m = two_cubes(2, refine=2)
    buf = io.StringIO()
    write_mesh(m, buf)
    m2 = parse_mesh(buf.getvalue())
    np.testing.assert_array_equal(m2.volumes(), m.volumes())
    np.testing.assert_array_equal(m2.tets, m.tets)
    assert m2.contacts == m.contacts
    buf2 = io.StringIO()
    write_mesh(m2, buf2)
    assert buf2.getvalue() == buf.getvalue()


# -- geometry ---------------------------------------------------------------


def test_unit_tet_geometry():
    vol, grads = tet_geometry(UNIT_TET)
    assert vol == pytest.approx(1 / 6)
    np.testing.assert_allclose(grads, [[-1, -1, -1], [1, 0, 0], [0, 1, 0], [0, 0, 1]],
                               atol=1e-15)


def _random_affine(seed):
    r = np.random.default_rng(seed)
    while True:
        A = r.normal(size=(3, 3))
        d = np.linalg.det(A)
        if abs(d) > 0.2:
            if d < 0:
                A[:, 0] *= -1  # keep the orientation positive
            return A, r.normal(size=3)


@given(st.integers(0, 10_000))
def test_gradients_reproduce_linear_fields(seed):
    A, b = _random_affine(seed)
    X = UNIT_TET @ A.T + b
    vol, grads = tet_geometry(X)
    assert vol == pytest.approx(np.linalg.det(A) / 6)
    np.testing.assert_allclose(grads.sum(axis=0), 0, atol=1e-10)
    # interpolated gradient of T = x is (1, 0, 0); of any linear field, its coefficients
    np.testing.assert_allclose(grads.T @ X[:, 0], [1, 0, 0], atol=1e-9)
    coef = np.random.default_rng(seed).normal(size=3)
    np.testing.assert_allclose(grads.T @ (X @ coef), coef, atol=1e-9)


@given(st.integers(0, 2**32 - 1))
def test_batch_signed_volume(seed):
    X = np.random.default_rng(seed).normal(size=(5, 4, 3))
    ref = np.array([np.linalg.det(x[1:] - x[0]) / 6 for x in X])
    lmax = np.array([max(np.linalg.norm(x[i] - x[j]) for i in range(4) for j in range(i))
                     for x in X])
    assume(np.all(np.abs(ref) > 1e-6 * np.maximum(lmax, 1e-3) ** 3))
    v, g = tet_geometry_batch(X)
    np.testing.assert_allclose(v, ref, rtol=1e-9)
    np.testing.assert_allclose(g.sum(axis=1), 0, atol=1e-6)


# -- dual graph -------------------------------------------------------------


def test_dual_graph_small():
    m = two_tets_mesh()
    assert build_dual_graph(m).nnz == 2
    single = Mesh.from_arrays(UNIT_TET, [[0, 1, 2, 3]], [0])
    assert build_dual_graph(single).nnz == 0


@pytest.mark.parametrize("n", [1, 2, 3])
def test_dual_graph_matches_brute_force(n):
    m = cube(n)
    g = build_dual_graph(m).tocoo()
    got = {(int(a), int(b)) for a, b in zip(g.row, g.col) if a < b}
    assert got == brute_face_adjacency(m.tets)
    deg = np.diff(build_dual_graph(m).indptr)
    assert deg.max() <= 4


def test_dual_graph_connected():
    from scipy.sparse.csgraph import connected_components
    ncomp, _ = connected_components(build_dual_graph(cube(3)), directed=False)
    assert ncomp == 1


def test_node_graph_is_edge_graph():
    m = two_tets_mesh()
    g = build_node_graph(m)
    assert (g != g.T).nnz == 0
    assert g.diagonal().sum() == 0
    # 6 + 6 edges, 3 shared on the common face
    assert g.nnz // 2 == 9


# -- sister pairing ---------------------------------------------------------


def test_pairing_matching_grids():
    m = two_cubes(2)
    p = pair_sister_facets(m)
    assert len(p) == 2 * m.facets_with_tag("a").size
    np.testing.assert_allclose(p.distance, 0, atol=1e-12)
    # sister is the owner of the coincident facet on the other side
    cents = m.facet_centroids()
    for f, s in zip(p.facet, p.sister):
        other = [g for g in range(m.n_facets)
                 if m.facet_tags[g] != m.facet_tags[f] and np.allclose(cents[g], cents[f])]
        assert len(other) == 1
        assert s == m.facet_owner[other[0]]


def test_pairing_refined_side_brute_force():
    m = two_cubes(2, refine=2)
    p = pair_sister_facets(m)
    cents = m.facet_centroids()
    for f, s, d in zip(p.facet, p.sister, p.distance):
        other = m.facets_with_tag("b" if m.facet_tags[f] == "a" else "a")
        dist = np.linalg.norm(cents[other] - cents[f], axis=1)
        best = dist.min()
        owners = m.facet_owner[other[np.abs(dist - best) <= 1e-12 * max(best, 1)]]
        assert d == pytest.approx(best, abs=1e-12)
        assert s == owners.min()
        assert m.regions[s] != m.regions[m.facet_owner[f]]


def test_pairing_one_sided_contact_is_error():
    m = cube(1)
    with pytest.raises(ConfigurationError):
        Mesh.from_arrays(m.nodes, m.tets, m.regions, m.facets, m.facet_tags,
                         [("wall", "missing")])


def test_pairing_deterministic():
    m = two_cubes(2, refine=3)
    p1, p2 = pair_sister_facets(m), pair_sister_facets(m)
    np.testing.assert_array_equal(p1.sister, p2.sister)
