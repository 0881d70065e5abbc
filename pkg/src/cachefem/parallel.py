"""Distributed explicit solve over in-process workers.

Each worker owns a set of elements and holds its own nodes in local
numbering: owned nodes first, in ascending global id, then the external
nodes of its sister elements. Each step runs in this order:

1. local blocked assembly;
2. paired swap of ``(C, r)`` on shared nodes, then summation;
3. explicit update of the owned nodes and fixed-temperature overwrite;
4. paired swap of the external-node temperatures.
"""
from __future__ import annotations

import threading
import time
from dataclasses import dataclass

import numpy as np

from .blocked import Record, autotune_block_count, build_block_plan
from .comm import (CommSchedule, ExchangeBuffer, InProcTransport, build_comm_graph,
                   edge_color_schedule, exchange_and_merge, exchange_temperatures)
from .errors import CommError, ConfigurationError, SolverError
from .fem import (Problem, SolverState, apply_fixed, explicit_update, initial_state,
                  mesh_geometry)
from .mesh import build_dual_graph
from .partition import (PartMap, augment_virtual_elements, classify_nodes,
                        partition_elements, plain_graph)


def partition_workers(problem: Problem, workers, augment=True, dual=None,
                      balance_tol=0.05) -> PartMap:
    """First-level element split among workers."""
    mesh = problem.mesh
    if workers == 1:
        return PartMap(np.zeros(mesh.n_elements, dtype=np.int64), 1)
    dual = build_dual_graph(mesh) if dual is None else dual
    if augment and len(problem.pairing):
        g = augment_virtual_elements(mesh, problem.pairing, one_side=True, dual=dual)
    else:
        g = plain_graph(mesh, dual)
    return partition_elements(g, k=workers, balance_tol=balance_tol)


@dataclass(eq=False)
class WorkerSetup:
    rank: int
    elements: np.ndarray
    global_of: np.ndarray  # local position -> global node
    node_index: np.ndarray  # global node -> local position, -1 if absent
    n_owned: int
    iface: np.ndarray  # pairing entries whose facet this worker owns
    iface_index: np.ndarray  # pairing entry -> local ambient slot
    sister_nodes: np.ndarray  # (n_iface, 4) local positions
    buffers: ExchangeBuffer
    plan: list  # [(stage, partner)]


def setup_workers(problem: Problem, partmap: PartMap, schedule: CommSchedule = None):
    mesh = problem.mesh
    pairing = problem.pairing
    cls = classify_nodes(mesh, partmap, pairing)
    graph = build_comm_graph(cls)
    schedule = edge_color_schedule(graph) if schedule is None else schedule
    owner_part = partmap.part[mesh.facet_owner[pairing.facet]] if len(pairing) else \
        np.zeros(0, dtype=np.int64)
    out = []
    for p in range(partmap.k):
        owned = cls.owned[p]
        ext = cls.external[p]
        global_of = np.concatenate([owned, ext])
        node_index = np.full(mesh.n_nodes, -1, dtype=np.int64)
        node_index[global_of] = np.arange(global_of.size)
        iface = np.flatnonzero(owner_part == p)
        iface_index = np.full(len(pairing), -1, dtype=np.int64)
        iface_index[iface] = np.arange(iface.size)
        sister_nodes = node_index[mesh.tets[pairing.sister[iface]]] if iface.size else \
            np.zeros((0, 4), dtype=np.int64)
        if np.any(sister_nodes < 0):
            raise SolverError(f"worker {p} misses sister nodes")
        shared = {q: node_index[v] for q, v in cls.neighbors[p].items()}
        send_temp = {}
        for q in range(partmap.k):
            need = cls.ext_sources[q].get(p) if q != p else None
            if need is not None and need.size:
                send_temp[q] = node_index[need]
        recv_temp = {q: node_index[v] for q, v in cls.ext_sources[p].items()}
        buffers = ExchangeBuffer(p, shared, send_temp, recv_temp)
        out.append(WorkerSetup(p, partmap.elements_of(p), global_of, node_index,
                               int(owned.size), iface, iface_index, sister_nodes,
                               buffers, schedule.plan_for(p)))
    return out, schedule, graph


@dataclass
class ParallelResult:
    series: list
    state: SolverState
    schedule: CommSchedule
    partmap: PartMap
    block_counts: list
    seconds: float  # wall time of the stepping loop only
    tune_overhead: list


def _local_enthalpy(problem, global_of, T):
    H = np.empty_like(T)
    nreg = problem.node_region[global_of]
    for r in np.unique(nreg):
        idx = np.flatnonzero(nreg == r)
        H[idx] = problem.materials[int(r)].enthalpy(T[idx])
    return H


def parallel_solve(problem: Problem, workers=2, blocks_per_worker=1, steps=None,
                   t_end=None, transport=None, output_every=None, partmap=None,
                   augment=True, state=None, timeout=120.0):
    """Solve with ``workers`` threads exchanging through ``transport``.

    ``blocks_per_worker`` is an int or ``"auto"`` (each worker tunes its own
    count). ``transport`` defaults to :class:`InProcTransport`. Returns a
    :class:`ParallelResult` whose state is the assembled global field.
    """
    if workers < 1:
        raise ConfigurationError("workers must be >= 1")
    if steps is None and t_end is None:
        t_end = problem.config.t_end
    if steps is None and t_end is None:
        raise SolverError("give steps or t_end")
    output_every = problem.config.output_every if output_every is None else output_every
    mesh = problem.mesh
    dual = build_dual_graph(mesh)
    geometry = mesh_geometry(mesh)
    partmap = partition_workers(problem, workers, augment, dual) if partmap is None else partmap
    if partmap.k != workers:
        raise ConfigurationError("partmap does not match the worker count")
    setups, schedule, _ = setup_workers(problem, partmap)
    transport = InProcTransport(workers, timeout) if transport is None else transport
    state0 = initial_state(problem) if state is None else state
    cfg = problem.config
    offset = schedule.n_stages

    results = [None] * workers
    errors = [None] * workers
    start = threading.Barrier(workers)

    def work(ws: WorkerSetup):
        ep = transport.endpoint(ws.rank)
        try:
            T = state0.T[ws.global_of].copy()
            H = _local_enthalpy(problem, ws.global_of, T)
            local = SolverState(T, H, state0.t, state0.dt, state0.step)
            overhead = float("nan")
            if blocks_per_worker == "auto":
                rep = autotune_block_count(problem, local, elements=ws.elements,
                                           node_index=ws.node_index,
                                           iface_index=ws.iface_index,
                                           sister_nodes=ws.sister_nodes,
                                           total_steps=steps, geometry=geometry)
                nb = rep.chosen
                overhead = rep.overhead
            else:
                nb = int(blocks_per_worker)
            nb = max(1, min(nb, ws.elements.size))
            plan = build_block_plan(problem, nb, ws.elements, ws.node_index, ws.iface_index,
                                    sister_nodes=ws.sister_nodes, geometry=geometry,
                                    dual=dual)
            n = ws.n_owned
            t, step = state0.t, state0.step
            dt = state0.dt
            recs = [(step, t, dt, T[:n].min(initial=np.inf), T[:n].max(initial=-np.inf))]
            start.wait(timeout)
            t0 = time.perf_counter()
            k = 0
            while True:
                if steps is not None and k >= steps:
                    break
                if t_end is not None and t >= t_end * (1 - 1e-14):
                    break
                amb = plan.ambient(T)
                bound = plan.timestep_bound(T, amb, t, cfg.length_scale) \
                    if ws.elements.size else np.inf
                dt = cfg.safety * ep.allreduce_min(bound)
                if t_end is not None:
                    dt = min(dt, t_end - t)
                C, r = plan.assemble(T, H, amb, t)
                exchange_and_merge(ws.plan, ws.buffers, ep, C, r, step)
                T[:n] = explicit_update(T[:n], C, r, dt)
                t += dt
                step += 1
                k += 1
                apply_fixed(problem, T, t, ws.node_index)
                exchange_temperatures(ws.plan, ws.buffers, ep, T, step, offset)
                plan.enthalpy(T, H)
                if output_every and step % output_every == 0:
                    recs.append((step, t, dt, T[:n].min(initial=np.inf),
                                 T[:n].max(initial=-np.inf)))
            elapsed = time.perf_counter() - t0
            if recs[-1][0] != step:
                recs.append((step, t, dt, T[:n].min(initial=np.inf),
                             T[:n].max(initial=-np.inf)))
            results[ws.rank] = (T[:n].copy(), H[:n].copy(), t, dt, step, recs, nb, elapsed,
                                overhead)
        except BaseException as exc:  # noqa: BLE001 - reported by the driver
            errors[ws.rank] = exc
            transport.abort()
            start.abort()

    threads = [threading.Thread(target=work, args=(ws,), name=f"worker-{ws.rank}")
               for ws in setups]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    for exc in errors:
        if exc is not None and not isinstance(exc, (CommError, threading.BrokenBarrierError)):
            raise exc
    for exc in errors:
        if exc is not None:
            raise exc

    T = np.empty(mesh.n_nodes)
    H = np.empty(mesh.n_nodes)
    for ws, res in zip(setups, results):
        T[ws.global_of[:ws.n_owned]] = res[0]
        H[ws.global_of[:ws.n_owned]] = res[1]
    _, _, t, dt, step, _, _, _, _ = results[0]
    series = []
    for i, rec in enumerate(results[0][5]):
        recs = [res[5][i] for res in results]
        series.append(Record(rec[0], rec[1], rec[2], float(min(x[3] for x in recs)),
                             float(max(x[4] for x in recs))))
    return ParallelResult(series, SolverState(T, H, t, dt, step), schedule, partmap,
                          [res[6] for res in results], max(res[7] for res in results),
                          [res[8] for res in results])
