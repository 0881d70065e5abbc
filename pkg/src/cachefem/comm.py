"""Communication graph, edge-colouring schedule and paired-swap transport.

Workers exchange data only in stages. In each stage every worker talks to
at most one partner, and each pair does a combined send and receive. The
stages come from an edge colouring of the communication graph, so the pairs
in a stage are disjoint and the exchange cannot deadlock.
"""
from __future__ import annotations

import logging
import queue
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import CommError, ProtocolError

log = logging.getLogger(__name__)

HEADER = struct.Struct("<qqq")


@dataclass(frozen=True)
class CommGraph:
    """Undirected graph on worker ids; ``edges`` holds sorted pairs
    ``(a, b)`` with ``a < b``, in ascending order."""

    n_workers: int
    edges: tuple

    def __post_init__(self):
        for a, b in self.edges:
            if a == b:
                raise ValueError(f"self-loop on worker {a}")
            if not (0 <= a < b < self.n_workers):
                raise ValueError(f"bad edge ({a}, {b})")

    @classmethod
    def from_edges(cls, n_workers, edges):
        es = sorted({(min(a, b), max(a, b)) for a, b in edges})
        return cls(int(n_workers), tuple(es))

    def neighbors(self, v):
        out = [b for a, b in self.edges if a == v] + [a for a, b in self.edges if b == v]
        return sorted(out)

    def degree(self, v=None):
        deg = np.zeros(self.n_workers, dtype=np.int64)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg if v is None else int(deg[v])

    @property
    def max_degree(self):
        return int(self.degree().max(initial=0))


def build_comm_graph(classification) -> CommGraph:
    """Edge ``(p, q)`` when the parts share a node or one holds external
    nodes owned by the other."""
    edges = set()
    for p in range(classification.k):
        for q in classification.neighbors[p]:
            edges.add((min(p, q), max(p, q)))
        for q in classification.owners_of_external[p]:
            if q != p:
                edges.add((min(p, q), max(p, q)))
    return CommGraph.from_edges(classification.k, edges)


@dataclass(frozen=True)
class CommSchedule:
    """Stages of disjoint worker pairs, in execution order."""

    stages: tuple

    @property
    def n_stages(self):
        return len(self.stages)

    def partner(self, worker, stage):
        for a, b in self.stages[stage]:
            if a == worker:
                return b
            if b == worker:
                return a
        return None

    def plan_for(self, worker):
        """``[(stage, partner), ...]`` for the stages ``worker`` takes part in."""
        out = []
        for s in range(self.n_stages):
            q = self.partner(worker, s)
            if q is not None:
                out.append((s, q))
        return out

    def validate(self, graph: CommGraph = None):
        seen = set()
        for s, pairs in enumerate(self.stages):
            busy = set()
            for a, b in pairs:
                if a in busy or b in busy:
                    raise ValueError(f"worker appears twice in stage {s}")
                busy.update((a, b))
                e = (min(a, b), max(a, b))
                if e in seen:
                    raise ValueError(f"edge {e} scheduled twice")
                seen.add(e)
        if graph is not None and seen != set(graph.edges):
            raise ValueError("schedule does not cover the graph's edges exactly")
        return True

    def to_csv(self, stream):
        stream.write("stage,workerA,workerB\n")
        for s, pairs in enumerate(self.stages):
            for a, b in pairs:
                stream.write(f"{s},{a},{b}\n")


def greedy_edge_coloring(graph: CommGraph):
    """Colour edges vertex by vertex, starting from the highest-degree
    vertex (lowest id on ties) and then the others in ascending id. Each
    uncoloured edge at the current vertex, taken by neighbour id, gets the
    lowest colour not already used at either end."""
    n = graph.n_workers
    deg = graph.degree()
    colour = {}
    used = [set() for _ in range(n)]
    if not graph.edges:
        return colour
    root = int(np.argmax(deg))
    order = [root] + [v for v in range(n) if v != root]
    for v in order:
        for w in graph.neighbors(v):
            e = (min(v, w), max(v, w))
            if e in colour:
                continue
            c = 0
            while c in used[v] or c in used[w]:
                c += 1
            colour[e] = c
            used[v].add(c)
            used[w].add(c)
    return colour


def misra_gries_edge_coloring(graph: CommGraph):
    """Proper edge colouring with at most ``max_degree + 1`` colours."""
    n = graph.n_workers
    ncol = graph.max_degree + 1
    at = [dict() for _ in range(n)]  # at[v][colour] = neighbour
    col = {}

    def free(v, c):
        return c not in at[v]

    def first_free(v):
        return next(c for c in range(ncol) if c not in at[v])

    def set_colour(a, b, c):
        old = col.pop((a, b), None) if (a, b) in col else col.pop((b, a), None)
        if old is not None:
            del at[a][old]
            del at[b][old]
        if c is not None:
            col[(a, b)] = c
            at[a][c] = b
            at[b][c] = a

    def colour_of(a, b):
        return col.get((a, b), col.get((b, a)))

    nbrs = [graph.neighbors(v) for v in range(n)]
    for u, v in graph.edges:
        # maximal fan of u starting at v
        fan = [v]
        in_fan = {v}
        grown = True
        while grown:
            grown = False
            last = fan[-1]
            for w in nbrs[u]:
                cw = colour_of(u, w)
                if w not in in_fan and cw is not None and free(last, cw):
                    fan.append(w)
                    in_fan.add(w)
                    grown = True
                    break
        c = first_free(u)
        d = first_free(fan[-1])
        # invert the cd-path starting at u
        path = []
        x, want = u, d
        while want in at[x]:
            y = at[x][want]
            path.append((x, y, want))
            x, want = y, (c if want == d else d)
        for x, y, _ in path:
            set_colour(x, y, None)
        for x, y, cc in path:
            set_colour(x, y, c if cc == d else d)
        # shortest fan prefix ending at a vertex where d is free
        w_idx = None
        for i, w in enumerate(fan):
            if i > 0:
                cw = colour_of(u, w)
                if cw is None or not free(fan[i - 1], cw):
                    break
            if free(w, d):
                w_idx = i
                break
        if w_idx is None:
            raise RuntimeError("edge colouring failed")  # unreachable
        # rotate the fan prefix
        shifted = [colour_of(u, fan[i + 1]) for i in range(w_idx)]
        for i in range(w_idx + 1):
            set_colour(u, fan[i], None)
        for i in range(w_idx):
            set_colour(u, fan[i], shifted[i])
        set_colour(u, fan[w_idx], d)
    return {(min(a, b), max(a, b)): c for (a, b), c in col.items()}


def _stages(colour):
    if not colour:
        return ()
    k = max(colour.values()) + 1
    stages = [[] for _ in range(k)]
    for e in sorted(colour):
        stages[colour[e]].append(e)
    return tuple(tuple(s) for s in stages if s)


def edge_color_schedule(graph: CommGraph) -> CommSchedule:
    """Stages ordered by colour. The greedy colouring is used when it stays
    within ``max_degree + 1`` colours, otherwise a Misra-Gries colouring."""
    colour = greedy_edge_coloring(graph)
    bound = graph.max_degree + 1
    if colour and max(colour.values()) + 1 > bound:
        log.info("greedy colouring used %d colours (bound %d); recolouring",
                 max(colour.values()) + 1, bound)
        colour = misra_gries_edge_coloring(graph)
    sched = CommSchedule(_stages(colour))
    sched.validate(graph)
    assert sched.n_stages <= bound or not graph.edges
    return sched


# ---------------------------------------------------------------------------
# Wire format


def encode(step, stage, values):
    v = np.ascontiguousarray(values, dtype="<f8")
    return HEADER.pack(int(step), int(stage), v.size) + v.tobytes()


def decode(buf, step, stage, count):
    """Check the header against the expected ``(step, stage, count)`` and
    return the payload."""
    if len(buf) < HEADER.size:
        raise ProtocolError("short message", stage=stage)
    s, g, n = HEADER.unpack_from(buf)
    if s != step or g != stage:
        raise ProtocolError(f"expected step {step} stage {stage}, got step {s} stage {g}",
                            stage=stage)
    if n != count or len(buf) != HEADER.size + 8 * n:
        raise ProtocolError(f"payload length {n}, expected {count}", stage=stage)
    return np.frombuffer(buf, dtype="<f8", offset=HEADER.size, count=n).astype(float)


# ---------------------------------------------------------------------------
# Transport


class InProcTransport:
    """Workers as threads of one process; messages are byte strings handed
    over through one queue per ordered worker pair."""

    def __init__(self, n_workers, timeout=60.0):
        self.n = n_workers
        self.timeout = timeout
        self._q = {(a, b): queue.Queue() for a in range(n_workers)
                   for b in range(n_workers) if a != b}
        self._barrier = threading.Barrier(n_workers)
        self._slots = [None] * n_workers
        self._aborted = threading.Event()

    def endpoint(self, rank):
        return InProcEndpoint(self, rank)

    def abort(self):
        self._aborted.set()
        self._barrier.abort()


class InProcEndpoint:
    def __init__(self, transport: InProcTransport, rank):
        self.t = transport
        self.rank = rank

    def sendrecv(self, partner, payload: bytes, stage=None):
        """Paired swap: hand ``payload`` to ``partner`` and wait for its
        message to us."""
        t = self.t
        pair = (self.rank, partner)
        if t._aborted.is_set():
            raise CommError("transport aborted", stage=stage, pair=pair)
        t._q[(self.rank, partner)].put(bytes(payload))
        waited = 0.0
        while True:
            try:
                return t._q[(partner, self.rank)].get(timeout=0.1)
            except queue.Empty:
                waited += 0.1
                if t._aborted.is_set():
                    raise CommError("transport aborted", stage=stage, pair=pair) from None
                if waited >= t.timeout:
                    raise CommError(f"no message from worker {partner}", stage=stage,
                                    pair=pair) from None

    def allreduce_min(self, value):
        t = self.t
        t._slots[self.rank] = float(value)
        try:
            t._barrier.wait(t.timeout)
            out = min(t._slots)
            t._barrier.wait(t.timeout)
        except threading.BrokenBarrierError:
            raise CommError("transport aborted during reduction") from None
        return out

    def abort(self):
        self.t.abort()


# ---------------------------------------------------------------------------
# Exchange


@dataclass
class ExchangeBuffer:
    """Per-neighbour index lists in a worker's local numbering.

    ``shared[q]``: positions of the nodes shared with ``q`` (ascending
    global id). ``send_temp[q]``: positions whose temperatures ``q`` needs.
    ``recv_temp[q]``: positions of our external nodes supplied by ``q``.
    """

    rank: int
    shared: dict
    send_temp: dict
    recv_temp: dict

    def shared_payload_length(self, q):
        return 2 * len(self.shared.get(q, ()))


def exchange_and_merge(plan, buffers: ExchangeBuffer, endpoint, C, r, step=0):
    """Swap ``(C, r)`` on shared nodes with each partner, stage by stage, and
    sum the contributions.

    Contributions are added in ascending worker id (own id included), so
    all workers holding a node end with bitwise identical sums. ``plan`` is
    the worker's ``[(stage, partner), ...]``. ``C`` and ``r`` are updated in
    place and returned.
    """
    received = {buffers.rank: None}
    for stage, q in plan:
        idx = buffers.shared.get(q)
        if idx is None or idx.size == 0:
            out = encode(step, stage, np.zeros(0))
        else:
            out = encode(step, stage, np.concatenate([C[idx], r[idx]]))
        try:
            msg = endpoint.sendrecv(q, out, stage)
        except CommError:
            endpoint.abort()
            raise
        n = 0 if idx is None else idx.size
        received[q] = decode(msg, step, stage, 2 * n)
    if len(received) == 1:
        return C, r
    shared = [i for q, i in buffers.shared.items() if i.size]
    if not shared:
        return C, r
    allidx = np.unique(np.concatenate(shared))
    accC = np.zeros(C.size)
    accr = np.zeros(r.size)
    touched = np.zeros(C.size, dtype=bool)
    touched[allidx] = True
    for q in sorted(received):
        if q == buffers.rank:
            accC[allidx] += C[allidx]
            accr[allidx] += r[allidx]
        else:
            idx = buffers.shared.get(q)
            if idx is None or idx.size == 0:
                continue
            v = received[q]
            accC[idx] += v[:idx.size]
            accr[idx] += v[idx.size:]
    C[touched] = accC[touched]
    r[touched] = accr[touched]
    return C, r


def exchange_temperatures(plan, buffers: ExchangeBuffer, endpoint, T, step=0, offset=0):
    """Second round: send the temperatures each partner needs for its
    external nodes and overwrite ours with what arrives. Stage ids in the
    headers are shifted by ``offset`` to tell the rounds apart."""
    for stage, q in plan:
        sidx = buffers.send_temp.get(q)
        ridx = buffers.recv_temp.get(q)
        tag = stage + offset
        out = encode(step, tag, T[sidx] if sidx is not None else np.zeros(0))
        try:
            msg = endpoint.sendrecv(q, out, tag)
        except CommError:
            endpoint.abort()
            raise
        n = 0 if ridx is None else ridx.size
        vals = decode(msg, step, tag, n)
        if n:
            T[ridx] = vals
    return T
