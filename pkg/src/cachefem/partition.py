"""Element-based, non-overlapping domain decomposition.

Elements are dealt out to parts; parts meet only at nodes. A node touched
by elements of more than one part is *shared* and its assembled values
need summation across parts; nodes of sister elements held by another part
are *external* and only their temperatures are needed.

Meshes made of decoupled regions (cast and mold meshed separately)
partition badly because the regions look unrelated to a graph
partitioner. :func:`augment_virtual_elements` glues them together with
zero-weight virtual tetrahedra that exist only in the partitioning graph.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import ConfigurationError, PartitionError
from .mesh import Mesh, SisterPairing, build_dual_graph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PartMap:
    """``part[i]`` is the part owning element ``i``."""

    part: np.ndarray
    k: int

    def __post_init__(self):
        p = np.asarray(self.part)
        if p.size and (p.min() < 0 or p.max() >= self.k):
            raise PartitionError("part id out of range")
        if np.bincount(p, minlength=self.k).min(initial=1) == 0:
            raise PartitionError("empty part")

    def elements_of(self, p):
        return np.flatnonzero(self.part == p)

    def sizes(self):
        return np.bincount(self.part, minlength=self.k)

    def save(self, path):
        with open(path, "w") as fh:
            for p in self.part.tolist():
                fh.write(f"{p}\n")

    @classmethod
    def load(cls, path, n_elements=None):
        part = np.loadtxt(path, dtype=np.int64, ndmin=1)
        if n_elements is not None and part.size != n_elements:
            raise PartitionError(f"partmap has {part.size} entries, mesh has {n_elements}")
        return cls(part, int(part.max()) + 1 if part.size else 1)


@dataclass(frozen=True)
class AugmentedGraph:
    """Dual graph whose first ``n_physical`` vertices are mesh elements and
    the rest virtual contact elements (weight 0)."""

    graph: sp.csr_matrix
    n_physical: int
    virtual_tets: np.ndarray
    weights: np.ndarray

    @property
    def n_virtual(self):
        return self.graph.shape[0] - self.n_physical

    @property
    def physical(self):
        return self.graph[: self.n_physical, : self.n_physical]


def plain_graph(mesh: Mesh, dual=None) -> AugmentedGraph:
    g = build_dual_graph(mesh) if dual is None else dual
    return AugmentedGraph(g, mesh.n_elements, np.zeros((0, 4), dtype=np.int64),
                          np.ones(mesh.n_elements))


def augment_virtual_elements(mesh: Mesh, pairing: SisterPairing, one_side=True,
                             dual=None) -> AugmentedGraph:
    """Append one virtual tetrahedron per interface facet to the dual graph.

    The virtual element is the facet's three nodes plus the node of the
    sister element closest to the facet centroid (lowest index on ties). It
    is linked to the facet's owner and to the sister element. With
    ``one_side`` only facets on the first side of each contact get one.
    """
    if pairing is None:
        raise ConfigurationError("sister pairing is required for augmentation")
    g = build_dual_graph(mesh) if dual is None else dual
    m = mesh.n_elements
    sel = np.arange(len(pairing))
    if one_side:
        sel = sel[pairing.side == 0]
    if sel.size == 0:
        return AugmentedGraph(g, m, np.zeros((0, 4), dtype=np.int64), np.ones(m))
    fac = pairing.facet[sel]
    sis = pairing.sister[sel]
    owner = mesh.facet_owner[fac]
    cent = mesh.facet_centroids(fac)
    snodes = mesh.tets[sis]
    d = ((mesh.nodes[snodes] - cent[:, None, :]) ** 2).sum(axis=2)
    # nearest sister node, lowest index on ties
    pick = np.empty(sel.size, dtype=np.int64)
    for i in range(sel.size):
        pick[i] = snodes[i][np.lexsort((snodes[i], d[i]))[0]]
    vt = np.column_stack([mesh.facets[fac], pick])
    v = m + np.arange(sel.size)
    rows = np.concatenate([v, owner, v, sis])
    cols = np.concatenate([owner, v, sis, v])
    extra = sp.csr_matrix((np.ones(rows.size, dtype=np.int8), (rows, cols)),
                          shape=(m + sel.size, m + sel.size))
    base = sp.csr_matrix((g.data, g.indices, g.indptr), shape=g.shape)
    base.resize((m + sel.size, m + sel.size))
    full = (base + extra).tocsr()
    full.data[:] = 1
    weights = np.concatenate([np.ones(m), np.zeros(sel.size)])
    return AugmentedGraph(full, m, vt, weights)


# ---------------------------------------------------------------------------
# Graph-growing partitioner


def _farthest(graph, sources, candidates):
    """Candidate farthest (in hops) from ``sources``; unreachable candidates
    count as infinitely far. Ties go to the lowest index."""
    dist = dijkstra(graph, unweighted=True, indices=sources, min_only=True)
    dc = dist[candidates]
    inf = np.isinf(dc)
    if inf.any():
        return int(candidates[inf][0])
    best = dc.max()
    return int(candidates[dc == best][0])


def partition_elements(graph, weights=None, k=2, balance_tol=0.05, n_physical=None,
                       refine=True) -> PartMap:
    """Split a (possibly augmented) dual graph into ``k`` parts.

    Parts are grown one at a time by breadth-first search from a seed that
    is as far as possible from the already assigned elements, until the
    part holds its share of the remaining weight. A boundary refinement
    pass then moves elements that lower the edge cut without pushing any
    part above ``(1 + balance_tol)`` times the mean weight. Parts are
    labelled in order of their smallest element; vertices beyond
    ``n_physical`` (virtual elements) are dropped from the result.
    """
    if isinstance(graph, AugmentedGraph):
        weights = graph.weights if weights is None else weights
        n_physical = graph.n_physical if n_physical is None else n_physical
        graph = graph.graph
    g = sp.csr_matrix(graph)
    n = g.shape[0]
    n_physical = n if n_physical is None else n_physical
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    if k < 1:
        raise PartitionError("need at least one part")
    if k > n_physical:
        raise PartitionError(f"{k} parts requested for {n_physical} elements")
    if k == 1:
        return PartMap(np.zeros(n_physical, dtype=np.int64), 1)
    ncomp, _ = connected_components(g, directed=False)
    if ncomp > 1:
        log.debug("partitioning graph has %d connected components", ncomp)

    part = np.full(n, -1, dtype=np.int64)
    remaining = float(w.sum())
    for p in range(k):
        unassigned = np.flatnonzero(part < 0)
        if p == k - 1:
            part[unassigned] = p
            break
        target = remaining / (k - p)
        if p == 0:
            far0 = _farthest(g, [0], unassigned)
            seed = _farthest(g, [far0], unassigned)
        else:
            seed = _farthest(g, np.flatnonzero(part >= 0), unassigned)
        got = 0.0
        while got < target - 1e-9:
            unassigned = np.flatnonzero(part < 0)
            sub = g[unassigned][:, unassigned]
            loc_seed = int(np.searchsorted(unassigned, seed))
            dist = dijkstra(sub, unweighted=True, indices=loc_seed)
            reach = np.flatnonzero(np.isfinite(dist))
            reach = reach[np.lexsort((reach, dist[reach]))]
            cum = got + np.cumsum(w[unassigned[reach]])
            stop = np.searchsorted(cum, target - 1e-9)
            take = reach[: stop + 1] if stop < reach.size else reach
            part[unassigned[take]] = p
            got = got + float(w[unassigned[take]].sum())
            rest = np.flatnonzero(part < 0)
            if got >= target - 1e-9 or rest.size == 0:
                break
            seed = _farthest(g, np.flatnonzero(part >= 0), rest)
        remaining -= got

    if refine:
        _refine(g, part, w, k, balance_tol)
    part = _canonical_labels(part[:n_physical], k)
    return PartMap(part, k)


def _canonical_labels(part, k):
    first = np.full(k, np.iinfo(np.int64).max)
    np.minimum.at(first, part, np.arange(part.size))
    order = np.argsort(first, kind="stable")
    relabel = np.empty(k, dtype=np.int64)
    relabel[order] = np.arange(k)
    return relabel[part]


def _refine(g, part, w, k, balance_tol, max_passes=8):
    n = g.shape[0]
    load = np.bincount(part, weights=w, minlength=k)
    mean = w.sum() / k
    cap = max((1.0 + balance_tol) * mean, np.ceil(mean - 1e-9))
    count = np.bincount(part, weights=(w > 0), minlength=k)
    indptr, indices = g.indptr, g.indices
    for _ in range(max_passes):
        onehot = sp.csr_matrix((np.ones(n), (np.arange(n), part)), shape=(n, k))
        nbr = np.asarray((g @ onehot).todense())
        own = nbr[np.arange(n), part]
        masked = nbr.copy()
        masked[np.arange(n), part] = -1
        best = masked.argmax(axis=1)
        gain = masked[np.arange(n), best] - own
        cand = np.flatnonzero(gain > 0)
        if cand.size == 0:
            break
        cand = cand[np.lexsort((cand, -gain[cand]))]
        moved = 0
        for i in cand.tolist():
            src = part[i]
            row = nbr[i].copy()
            row[src] = -1
            dst = int(row.argmax())
            if row[dst] - nbr[i, src] <= 0:
                continue
            wi = w[i]
            if load[dst] + wi > cap + 1e-9:
                continue
            if wi > 0 and count[src] <= 1:
                continue
            part[i] = dst
            load[src] -= wi
            load[dst] += wi
            if wi > 0:
                count[src] -= 1
                count[dst] += 1
            nb = indices[indptr[i]:indptr[i + 1]]
            nbr[nb, src] -= 1
            nbr[nb, dst] += 1
            moved += 1
        if moved == 0:
            break


# ---------------------------------------------------------------------------
# Node classes and metrics


@dataclass
class NodeClassification:
    """Per-part node sets.

    ``neighbors[p][q]`` lists the nodes part ``p`` shares with ``q``;
    ``ext_sources[p][q]`` lists the external nodes of ``p`` whose
    temperature ``q`` supplies (the lowest-numbered owning part).
    All node arrays are ascending global ids.
    """

    k: int
    owned: list
    private: list
    shared: list
    external: list
    neighbors: list
    ext_sources: list
    owners_of_external: list = field(default_factory=list)


def classify_nodes(mesh: Mesh, partmap: PartMap, pairing: SisterPairing = None):
    k = partmap.k
    n = mesh.n_nodes
    part = partmap.part
    pairs = np.unique(mesh.tets.ravel() * k + np.repeat(part, 4))
    node_of = pairs // k
    part_of = pairs % k
    nparts = np.bincount(node_of, minlength=n)
    first_owner = np.full(n, -1, dtype=np.int64)
    first = np.ones(pairs.size, dtype=bool)
    first[1:] = node_of[1:] != node_of[:-1]
    first_owner[node_of[first]] = part_of[first]

    owned, private, shared, external, neighbors, sources, ext_owners = ([] for _ in range(7))
    is_shared = nparts > 1
    for p in range(k):
        mine = node_of[part_of == p]
        owned.append(mine)
        private.append(mine[~is_shared[mine]])
        sh = mine[is_shared[mine]]
        shared.append(sh)
        nb = {}
        sel = np.isin(node_of, sh) & (part_of != p)
        for q in np.unique(part_of[sel]).tolist():
            nb[q] = np.intersect1d(sh, node_of[sel & (part_of == q)])
        neighbors.append(nb)

        ext = np.zeros(0, dtype=np.int64)
        if pairing is not None and len(pairing):
            mine_if = part[mesh.facet_owner[pairing.facet]] == p
            cand = np.unique(mesh.tets[pairing.sister[mine_if]])
            ext = cand[~np.isin(cand, mine, assume_unique=True)]
        external.append(ext)
        src = {}
        for q in np.unique(first_owner[ext]).tolist():
            src[q] = ext[first_owner[ext] == q]
        sources.append(src)
        owners = set()
        if ext.size:
            owners = set(np.unique(part_of[np.isin(node_of, ext)]).tolist())
        ext_owners.append(owners)
    return NodeClassification(k, owned, private, shared, external, neighbors, sources,
                              ext_owners)


@dataclass(frozen=True)
class PartitionQuality:
    edge_cut: int
    imbalance: float
    neighbor_counts: np.ndarray

    def as_dict(self):
        return {"edge_cut": self.edge_cut, "imbalance": self.imbalance,
                "max_neighbors": int(self.neighbor_counts.max(initial=0))}


def partition_metrics(dual_graph, partmap: PartMap) -> PartitionQuality:
    """Edge cut over physical dual edges, load imbalance (max / mean element
    count) and the number of neighbouring parts of each part."""
    if isinstance(dual_graph, AugmentedGraph):
        dual_graph = dual_graph.physical
    g = sp.triu(sp.coo_matrix(dual_graph), k=1)
    part = partmap.part
    cut = part[g.row] != part[g.col]
    sizes = partmap.sizes()
    imbalance = float(sizes.max() / sizes.mean())
    k = partmap.k
    adj = np.zeros((k, k), dtype=bool)
    adj[part[g.row[cut]], part[g.col[cut]]] = True
    adj |= adj.T
    return PartitionQuality(int(cut.sum()), imbalance, adj.sum(axis=1))


def split_interface_pairs(mesh: Mesh, pairing: SisterPairing, partmap: PartMap):
    """Number of (interface facet, sister) pairs whose two elements lie in
    different parts."""
    if pairing is None or not len(pairing):
        return 0
    a = partmap.part[mesh.facet_owner[pairing.facet]]
    b = partmap.part[pairing.sister]
    return int(np.count_nonzero(a != b))


@dataclass(frozen=True)
class TwoLevelDecomposition:
    workers: PartMap
    blocks: list  # PartMap per worker, aligned with workers.elements_of(w)

    def worker_elements(self, w):
        return self.workers.elements_of(w)


def subgraph(graph, elements):
    g = sp.csr_matrix(graph)
    return g[elements][:, elements]


def two_level_decompose(mesh: Mesh, workers, blocks_per_worker, augment=True,
                        pairing=None, dual=None, balance_tol=0.05):
    """First split elements among workers, then split each worker's
    elements into cache blocks."""
    if workers < 1 or blocks_per_worker < 1:
        raise PartitionError("workers and blocks_per_worker must be >= 1")
    dual = build_dual_graph(mesh) if dual is None else dual
    if augment and mesh.contacts:
        if pairing is None:
            from .mesh import pair_sister_facets
            pairing = pair_sister_facets(mesh)
        ag = augment_virtual_elements(mesh, pairing, one_side=True, dual=dual)
    else:
        ag = plain_graph(mesh, dual)
    top = partition_elements(ag, k=workers, balance_tol=balance_tol)
    blocks = []
    for w in range(workers):
        els = top.elements_of(w)
        blocks.append(partition_elements(subgraph(dual, els), k=blocks_per_worker,
                                         balance_tol=balance_tol))
    return TwoLevelDecomposition(top, blocks)
