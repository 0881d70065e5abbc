import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from cachefem.errors import PartitionError
from cachefem.fixtures import cast_in_mold_mesh, cube, two_cubes
from cachefem.mesh import build_dual_graph, pair_sister_facets
from cachefem.partition import (PartMap, augment_virtual_elements, classify_nodes,
                                partition_elements, partition_metrics, plain_graph,
                                split_interface_pairs, two_level_decompose)

from conftest import chain_mesh, two_tets_mesh


def path_graph(n):
    a = sp.diags([np.ones(n - 1)], [1], shape=(n, n))
    return (a + a.T).tocsr()


def test_chain_of_four_in_two():
    g = build_dual_graph(chain_mesh(4))
    pm = partition_elements(g, k=2)
    assert pm.part.tolist() == [0, 0, 1, 1]
    q = partition_metrics(g, pm)
    assert q.edge_cut == 1
    assert q.imbalance == 1.0
    assert q.neighbor_counts.tolist() == [1, 1]


def test_single_part_and_too_many_parts():
    g = path_graph(5)
    assert partition_elements(g, k=1).part.tolist() == [0] * 5
    with pytest.raises(PartitionError):
        partition_elements(g, k=6)
    with pytest.raises(PartitionError):
        partition_elements(g, k=0)


@pytest.mark.parametrize("k", [2, 3, 4, 7])
def test_parts_nonempty_and_labelled_by_first_element(k):
    g = build_dual_graph(cube(3))
    pm = partition_elements(g, k=k)
    assert pm.sizes().min() > 0
    firsts = [int(pm.elements_of(p)[0]) for p in range(k)]
    assert firsts == sorted(firsts)
    assert pm.sizes().max() <= np.ceil(1.05 * g.shape[0] / k)


def test_partmap_errors_and_roundtrip(tmp_path):
    with pytest.raises(PartitionError):
        PartMap(np.array([0, 2, 2]), 3)  # part 1 empty
    with pytest.raises(PartitionError):
        PartMap(np.array([0, 3]), 2)
    pm = PartMap(np.array([1, 0, 1, 0]), 2)
    pm.save(tmp_path / "p.txt")
    back = PartMap.load(tmp_path / "p.txt", n_elements=4)
    np.testing.assert_array_equal(back.part, pm.part)
    with pytest.raises(PartitionError):
        PartMap.load(tmp_path / "p.txt", n_elements=5)


# -- virtual contact elements -----------------------------------------------


def test_virtual_element_links_owner_and_sister():
    m = two_cubes(1)
    p = pair_sister_facets(m)
    ag = augment_virtual_elements(m, p)
    side_a = m.facets_with_tag("a")
    assert ag.n_virtual == side_a.size
    cents = m.facet_centroids()
    g = ag.graph.tolil()
    for v, tet in enumerate(ag.virtual_tets):
        vid = ag.n_physical + v
        nbrs = sorted(g.rows[vid])
        assert len(nbrs) == 2
        # three facet nodes plus the nearest sister node
        fac = [f for f in side_a if set(m.facets[f]) == set(tet[:3])]
        assert len(fac) == 1
        f = fac[0]
        sis = p.sister[p.facet == f][0]
        assert nbrs == sorted([int(m.facet_owner[f]), int(sis)])
        d = np.linalg.norm(m.nodes[m.tets[sis]] - cents[f], axis=1)
        cand = m.tets[sis][d == d.min()]
        assert tet[3] == cand.min()
    np.testing.assert_array_equal(ag.weights[ag.n_physical:], 0)
    np.testing.assert_array_equal(ag.weights[:ag.n_physical], 1)


def test_both_sides_doubles_virtual_count():
    m = two_cubes(2)
    p = pair_sister_facets(m)
    one = augment_virtual_elements(m, p, one_side=True)
    both = augment_virtual_elements(m, p, one_side=False)
    assert both.n_virtual == 2 * one.n_virtual


def test_no_interface_graph_unchanged():
    m = cube(2)
    p = pair_sister_facets(m)
    ag = augment_virtual_elements(m, p)
    assert ag.n_virtual == 0
    assert (ag.graph != build_dual_graph(m)).nnz == 0


def test_augmented_partition_drops_virtual_vertices():
    m = cast_in_mold_mesh(3, 1)
    ag = augment_virtual_elements(m, pair_sister_facets(m))
    pm = partition_elements(ag, k=4)
    assert pm.part.size == m.n_elements
    assert pm.sizes().min() > 0


def test_augmentation_does_not_split_more_pairs():
    m = cast_in_mold_mesh(4, 1, shuffle=True)
    pairing = pair_sister_facets(m)
    dual = build_dual_graph(m)
    plain = partition_elements(plain_graph(m, dual), k=6)
    aug = partition_elements(augment_virtual_elements(m, pairing, dual=dual), k=6)
    assert split_interface_pairs(m, pairing, aug) <= split_interface_pairs(m, pairing, plain)


# -- node classification -----------------------------------------------------


def test_two_tets_in_two_parts():
    m = two_tets_mesh()
    c = classify_nodes(m, PartMap(np.array([0, 1]), 2))
    assert c.private[0].tolist() == [0]
    assert c.private[1].tolist() == [4]
    assert c.shared[0].tolist() == [1, 2, 3]
    assert c.neighbors[0][1].tolist() == [1, 2, 3]
    assert c.neighbors[1][0].tolist() == [1, 2, 3]


def test_single_part_all_private():
    m = cube(2)
    c = classify_nodes(m, PartMap(np.zeros(m.n_elements, np.int64), 1))
    assert c.private[0].size == m.n_nodes
    assert c.shared[0].size == 0 and c.external[0].size == 0


def test_classification_brute_force():
    m = cast_in_mold_mesh(3, 1)
    pairing = pair_sister_facets(m)
    pm = partition_elements(plain_graph(m), k=5)
    c = classify_nodes(m, pm, pairing)
    parts_of = [set() for _ in range(m.n_nodes)]
    for e, tet in enumerate(m.tets):
        for v in tet:
            parts_of[v].add(int(pm.part[e]))
    for p in range(5):
        owned = {v for v in range(m.n_nodes) if p in parts_of[v]}
        assert set(c.owned[p].tolist()) == owned
        assert set(c.shared[p].tolist()) == {v for v in owned if len(parts_of[v]) > 1}
        assert set(c.private[p].tolist()) == {v for v in owned if len(parts_of[v]) == 1}
        ext = set()
        for f, s in zip(pairing.facet, pairing.sister):
            if pm.part[m.facet_owner[f]] == p:
                ext |= {int(v) for v in m.tets[s] if v not in owned}
        assert set(c.external[p].tolist()) == ext
        # supplier is the lowest part owning the node
        for q, nodes in c.ext_sources[p].items():
            for v in nodes.tolist():
                assert q == min(parts_of[v])


# -- metrics -----------------------------------------------------------------


@given(st.integers(0, 2**32 - 1))
def test_metrics_brute_force(seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(4, 25))
    k = int(r.integers(1, min(n, 5) + 1))
    part = np.concatenate([np.arange(k), r.integers(0, k, n - k)])
    r.shuffle(part)
    e = r.integers(0, n, size=(2 * n, 2))
    e = e[e[:, 0] != e[:, 1]]
    g = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    g = ((g + g.T) > 0).astype(float).tocsr()
    q = partition_metrics(g, PartMap(part, k))
    und = {tuple(sorted(x)) for x in e.tolist()}
    assert q.edge_cut == sum(part[a] != part[b] for a, b in und)
    sizes = np.bincount(part, minlength=k)
    assert q.imbalance == pytest.approx(sizes.max() / sizes.mean())
    for p in range(k):
        nb = {int(part[b]) for a, b in itertools.chain(und, [(y, x) for x, y in und])
              if part[a] == p and part[b] != p}
        assert q.neighbor_counts[p] == len(nb)


# -- two-level split ---------------------------------------------------------


def test_two_level_trivial_and_chain():
    m = chain_mesh(8)
    t = two_level_decompose(m, 1, 1)
    assert t.workers.part.tolist() == [0] * 8
    t = two_level_decompose(m, 1, 4)
    assert t.blocks[0].part.tolist() == [0, 0, 1, 1, 2, 2, 3, 3]


def test_two_level_blocks_cover_worker_elements():
    m = cast_in_mold_mesh(3, 1)
    t = two_level_decompose(m, 2, 2)
    seen = []
    for w in range(2):
        els = t.worker_elements(w)
        assert t.blocks[w].part.size == els.size
        assert t.blocks[w].sizes().min() > 0
        seen.append(els)
    assert np.array_equal(np.sort(np.concatenate(seen)), np.arange(m.n_elements))
    with pytest.raises(PartitionError):
        two_level_decompose(m, 0, 1)
