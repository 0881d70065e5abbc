"""Reverse Cuthill-McKee node renumbering and bandwidth measurement."""
from __future__ import annotations

from collections import deque

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, build_node_graph


def _csr(graph):
    g = sp.csr_matrix(graph)
    g.sort_indices()
    return g.indptr, g.indices


def _bfs_levels(indptr, indices, start, level):
    """BFS from ``start``; fills ``level`` (must be -1 on unvisited nodes of
    the component) and returns the visit order and the eccentricity."""
    level[start] = 0
    order = [start]
    q = deque([start])
    ecc = 0
    while q:
        u = q.popleft()
        lu = level[u] + 1
        for v in indices[indptr[u]:indptr[u + 1]]:
            if level[v] < 0:
                level[v] = lu
                ecc = lu
                order.append(v)
                q.append(v)
    return order, ecc


def pseudo_peripheral_node(graph, start):
    """George-Liu heuristic: hop to a minimum-degree node of the last BFS
    level while the eccentricity keeps growing."""
    indptr, indices = _csr(graph)
    degree = np.diff(indptr)
    level = np.full(indptr.size - 1, -1, dtype=np.int64)
    order, ecc = _bfs_levels(indptr, indices, start, level)
    comp = np.asarray(order)
    r = start
    while True:
        last = comp[level[comp] == ecc]
        # lowest degree, then lowest index
        cand = last[np.lexsort((last, degree[last]))[0]]
        level[comp] = -1
        _, ecc_c = _bfs_levels(indptr, indices, cand, level)
        if ecc_c <= ecc:
            return int(r)
        r, ecc = cand, ecc_c


def rcm_permutation(graph, seed=None):
    """Reverse Cuthill-McKee ordering.

    Components are numbered in order of their smallest node index; each
    starts from a pseudo-peripheral node (or ``seed`` for the component
    containing it). Within the breadth-first sweep, neighbours are taken
    by increasing degree, ties by increasing index. The concatenated
    sweep is reversed.

    Returns
    -------
    new_of_old : ndarray
        ``new_of_old[i]`` is the new label of node ``i``.
    """
    indptr, indices = _csr(graph)
    n = indptr.size - 1
    degree = np.diff(indptr)
    visited = np.zeros(n, dtype=bool)
    order = []
    seed_done = seed is None
    for s in range(n):
        if visited[s]:
            continue
        if not seed_done and _same_component(indptr, indices, s, seed):
            start = int(seed)
            seed_done = True
        else:
            start = pseudo_peripheral_node(graph, s)
        visited[start] = True
        order.append(start)
        head = len(order) - 1
        while head < len(order):
            u = order[head]
            head += 1
            nb = indices[indptr[u]:indptr[u + 1]]
            nb = nb[~visited[nb]]
            if nb.size:
                nb = nb[np.lexsort((nb, degree[nb]))]
                visited[nb] = True
                order.extend(nb.tolist())
    order = np.asarray(order[::-1], dtype=np.int64)
    new_of_old = np.empty(n, dtype=np.int64)
    new_of_old[order] = np.arange(n)
    return new_of_old


def _same_component(indptr, indices, a, b):
    n = indptr.size - 1
    level = np.full(n, -1, dtype=np.int64)
    order, _ = _bfs_levels(indptr, indices, a, level)
    return level[b] >= 0


def bandwidth(graph, permutation=None):
    """Largest label distance ``|new(u) - new(v)|`` over the graph's edges."""
    g = sp.coo_matrix(graph)
    if g.nnz == 0:
        return 0
    if permutation is None:
        return int(np.abs(g.row - g.col).max())
    p = np.asarray(permutation)
    return int(np.abs(p[g.row] - p[g.col]).max())


def check_permutation(permutation, n):
    p = np.asarray(permutation, dtype=np.int64)
    if p.shape != (n,):
        raise ValueError(f"permutation has length {p.size}, expected {n}")
    seen = np.zeros(n, dtype=bool)
    if p.min(initial=0) < 0 or p.max(initial=-1) >= n:
        raise ValueError("permutation entries out of range")
    seen[p] = True
    if not seen.all():
        raise ValueError("permutation is not a bijection")
    return p


def permute_mesh(mesh: Mesh, permutation) -> Mesh:
    """Relabel nodes: node ``i`` becomes ``permutation[i]``. Elements and
    facets keep their order, so sister pairings stay valid."""
    p = check_permutation(permutation, mesh.n_nodes)
    nodes = np.empty_like(mesh.nodes)
    nodes[p] = mesh.nodes
    return Mesh.from_arrays(nodes, p[mesh.tets], mesh.regions.copy(),
                            p[mesh.facets], mesh.facet_tags.copy(), list(mesh.contacts))


def permute_field(values, permutation):
    """Move a nodal field onto the relabelled mesh."""
    out = np.empty_like(values)
    out[np.asarray(permutation)] = values
    return out


def reorder_mesh(mesh: Mesh, seed=None):
    """RCM-renumber ``mesh``; returns ``(new_mesh, permutation, before, after)``."""
    g = build_node_graph(mesh)
    p = rcm_permutation(g, seed)
    return permute_mesh(mesh, p), p, bandwidth(g), bandwidth(g, p)


def write_sparsity_pattern(graph, stream, permutation=None):
    """One ``row col`` pair per nonzero (diagonal included)."""
    g = sp.coo_matrix(graph)
    n = g.shape[0]
    rows = np.concatenate([g.row, np.arange(n)])
    cols = np.concatenate([g.col, np.arange(n)])
    if permutation is not None:
        p = np.asarray(permutation)
        rows, cols = p[rows], p[cols]
    for i, j in zip(rows.tolist(), cols.tolist()):
        stream.write(f"{i} {j}\n")
