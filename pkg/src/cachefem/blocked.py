"""Cache-blocked serial driver.

The element set is split into blocks by the partitioner; each block owns a
contiguous copy of its geometry and a local node numbering, so one sweep
over a block touches a working set small enough to stay in cache. Blocks
are assembled one at a time into per-block accumulators; shared nodes are
then summed across blocks in a fixed (node, block) order before the
explicit update. The result does not depend on the block count beyond
floating-point summation order.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .fem import (GlobalAssembly, Problem, SolverState, apply_fixed, assemble_local,
                  block_timestep_bound, explicit_update, initial_state, interface_ambient,
                  make_block, mesh_geometry)
from .mesh import build_dual_graph
from .partition import PartMap, partition_elements, subgraph


@dataclass(eq=False)
class BlockPlan:
    """Blocks of one element set plus the shared-node merge layout.

    ``order``/``starts`` describe the flat merge list: concatenating the
    blocks' local nodal values and taking them in ``order`` groups every
    node's contributions together, in ascending block order; each group
    begins at ``starts[i]`` and belongs to owned node ``i``.
    """

    blocks: list
    partmap: PartMap
    n_owned: int
    order: np.ndarray
    starts: np.ndarray
    offsets: np.ndarray
    sister_nodes: np.ndarray = field(default_factory=lambda: np.zeros((0, 4), np.int64))
    node_groups: list = field(default_factory=list)

    @property
    def n_blocks(self):
        return len(self.blocks)

    @property
    def total_slots(self):
        """Sum of block-local node counts (shared nodes counted per block)."""
        return int(self.offsets[-1])

    def merge_lists(self):
        """``{node: [(block, local_slot), ...]}`` for nodes touched by more
        than one block."""
        out = {}
        for b, blk in enumerate(self.blocks):
            for slot, node in enumerate(blk.gather.tolist()):
                out.setdefault(node, []).append((b, slot))
        return {n: v for n, v in sorted(out.items()) if len(v) > 1}

    def mean_block_bytes(self):
        return float(np.mean([b.nbytes() for b in self.blocks]))

    def enthalpy(self, T, H):
        """Refresh ``H`` on the owned nodes from the enthalpy curves."""
        for mat, idx in self.node_groups:
            H[idx] = mat.enthalpy(T[idx])
        return H

    def ambient(self, T):
        return interface_ambient(T[self.sister_nodes])

    def timestep_bound(self, T, ambient, t, length_scale="altitude"):
        return min(block_timestep_bound(b, T[b.gather], ambient, t, length_scale)
                   for b in self.blocks)

    def assemble(self, T, H, ambient=None, t=0.0):
        """Phase 1 (per-block assembly) and phase 2 (shared-node merge).

        Returns ``C`` and ``r`` over the plan's owned nodes.
        """
        if len(self.blocks) == 1:
            b = self.blocks[0]
            C, r = assemble_local(b, T[b.gather], H[b.gather], ambient, t)
            if b.gather.size == self.n_owned and self.order is None:
                return C, r
            Cm = np.empty(self.n_owned)
            rm = np.empty(self.n_owned)
            Cm[b.gather] = C
            rm[b.gather] = r
            return Cm, rm
        nslot = self.total_slots
        Cs = np.empty(nslot)
        rs = np.empty(nslot)
        for b, o0, o1 in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            Cs[o0:o1], rs[o0:o1] = assemble_local(b, T[b.gather], H[b.gather], ambient, t)
        return (np.add.reduceat(Cs[self.order], self.starts),
                np.add.reduceat(rs[self.order], self.starts))


def build_block_plan(problem: Problem, block_count, elements=None, node_index=None,
                     iface_index=None, part=None, sister_nodes=None, geometry=None,
                     dual=None, balance_tol=0.05) -> BlockPlan:
    """Split ``elements`` (default: all) into ``block_count`` blocks.

    ``node_index`` maps global node ids to positions in the caller's nodal
    arrays; the nodes touched by ``elements`` must map to ``0..n_owned-1``.
    ``part`` may supply a precomputed block assignment aligned with
    ``elements``.
    """
    mesh = problem.mesh
    if block_count < 1:
        raise SolverError("block_count must be >= 1")
    elements = np.arange(mesh.n_elements) if elements is None else np.asarray(elements)
    node_index = np.arange(mesh.n_nodes) if node_index is None else node_index
    if part is None:
        if block_count == 1:
            pm = PartMap(np.zeros(elements.size, dtype=np.int64), 1)
        else:
            dual = build_dual_graph(mesh) if dual is None else dual
            pm = partition_elements(subgraph(dual, elements), k=block_count,
                                    balance_tol=balance_tol)
    else:
        pm = part if isinstance(part, PartMap) else PartMap(np.asarray(part), block_count)
    if geometry is None:
        geometry = mesh_geometry(mesh)
    blocks = [make_block(problem, elements[pm.part == b], node_index, iface_index, geometry)
              for b in range(pm.k)]
    offsets = np.concatenate([[0], np.cumsum([b.n_nodes for b in blocks])])
    flat = np.concatenate([b.gather for b in blocks])
    block_of = np.repeat(np.arange(len(blocks)), [b.n_nodes for b in blocks])
    order = np.lexsort((block_of, flat))
    sf = flat[order]
    first = np.ones(sf.size, dtype=bool)
    first[1:] = sf[1:] != sf[:-1]
    starts = np.flatnonzero(first)
    owned = sf[starts]
    if not np.array_equal(owned, np.arange(owned.size)):
        raise SolverError("owned nodes must occupy the leading positions of node_index")
    if sister_nodes is None:
        sister_nodes = node_index[mesh.tets[problem.pairing.sister]]
    if len(blocks) == 1:
        order = None
    # owned position -> global node, to group nodes by region
    global_of = np.empty(owned.size, dtype=np.int64)
    for b in blocks:
        global_of[b.gather] = np.unique(mesh.tets[b.elements])
    nreg = problem.node_region[global_of]
    groups = [(problem.materials[int(r)], np.flatnonzero(nreg == r)) for r in np.unique(nreg)]
    return BlockPlan(blocks, pm, int(owned.size), order, starts, offsets, sister_nodes,
                     groups)


def blocked_step(plan: BlockPlan, state: SolverState, problem: Problem, dt=None):
    """One explicit step: assemble block by block, merge, update."""
    amb = plan.ambient(state.T)
    if dt is None:
        cfg = problem.config
        dt = cfg.safety * plan.timestep_bound(state.T, amb, state.t, cfg.length_scale)
    C, r = plan.assemble(state.T, state.H, amb, state.t)
    T = explicit_update(state.T, C, r, dt)
    t = state.t + dt
    apply_fixed(problem, T, t)
    return SolverState(T, plan.enthalpy(T, np.empty_like(T)), t, dt, state.step + 1)


@dataclass
class Record:
    step: int
    t: float
    dt: float
    T_min: float
    T_max: float


def _record(state):
    return Record(state.step, state.t, state.dt, float(state.T.min()), float(state.T.max()))


def run(stepper, state, steps=None, t_end=None, output_every=0, timestep=None):
    """Advance ``state`` with ``stepper(state, dt)``.

    Stops after ``steps`` steps or when ``t_end`` is reached (the last step
    is shortened to land on it). ``timestep(state)`` supplies the stable
    step when stopping on time.
    """
    if steps is None and t_end is None:
        raise SolverError("give steps or t_end")
    series = [_record(state)]
    n = 0
    while True:
        if steps is not None and n >= steps:
            break
        if t_end is not None and state.t >= t_end * (1 - 1e-14):
            break
        dt = None
        if t_end is not None:
            dt = timestep(state)
            dt = min(dt, t_end - state.t)
        state = stepper(state, dt)
        n += 1
        if output_every and state.step % output_every == 0:
            series.append(_record(state))
    if series[-1].step != state.step:
        series.append(_record(state))
    return series, state


def solve(problem: Problem, blocks=1, steps=None, t_end=None, state=None,
          output_every=None, plan=None):
    """Serial solve with ``blocks`` cache blocks (``"auto"`` to tune).

    ``blocks=0`` runs the traditional unblocked sweep.
    """
    state = initial_state(problem) if state is None else state
    output_every = problem.config.output_every if output_every is None else output_every
    if t_end is None and steps is None:
        t_end = problem.config.t_end
    if blocks == 0:
        asm = GlobalAssembly(problem)
        return run(asm.step, state, steps, t_end, output_every, asm.timestep)
    if plan is None:
        if blocks == "auto":
            blocks = autotune_block_count(problem, state).chosen
        plan = build_block_plan(problem, int(blocks))

    def timestep(s):
        cfg = problem.config
        return cfg.safety * plan.timestep_bound(s.T, plan.ambient(s.T), s.t, cfg.length_scale)

    return run(lambda s, dt: blocked_step(plan, s, problem, dt), state, steps, t_end,
               output_every, timestep)


# ---------------------------------------------------------------------------
# Tuning


@dataclass
class TuneReport:
    candidates: list
    seconds: list
    chosen: int
    overhead: float = float("nan")

    def rows(self):
        return list(zip(self.candidates, self.seconds))

    def to_csv(self, stream):
        stream.write("blocks,seconds\n")
        for b, s in self.rows():
            stream.write(f"{b},{s:.6g}\n")


def choose_block_count(timings):
    """Candidate with the smallest time; ties go to the smaller count."""
    if not timings:
        raise ValueError("no timings")
    return min(sorted(timings), key=lambda b: timings[b])


def default_candidates(n_elements, min_block_elements=64):
    out = [1]
    while n_elements / (out[-1] * 2) >= min_block_elements:
        out.append(out[-1] * 2)
    return out


def autotune_block_count(problem: Problem, state: SolverState, candidates=None,
                         trial_steps=10, repeats=2, elements=None, node_index=None,
                         iface_index=None, sister_nodes=None, total_steps=None,
                         timer=time.perf_counter, geometry=None):
    """Time a few local steps for each candidate block count.

    Runs on a copy of ``state`` restricted to ``elements`` (all by default)
    with no exchange of any kind; best of ``repeats`` per candidate. When
    ``total_steps`` is given, ``overhead`` is the tuning time as a fraction
    of the projected full run.
    """
    mesh = problem.mesh
    n_el = mesh.n_elements if elements is None else len(elements)
    candidates = default_candidates(n_el) if candidates is None else list(candidates)
    if not candidates:
        raise ValueError("no candidate block counts")
    geometry = mesh_geometry(mesh) if geometry is None else geometry
    dual = build_dual_graph(mesh) if len(candidates) > 1 else None
    t_start = timer()
    seconds = []
    for b in candidates:
        plan = build_block_plan(problem, b, elements, node_index, iface_index,
                                sister_nodes=sister_nodes, geometry=geometry, dual=dual)
        best = np.inf
        for _ in range(repeats):
            T = state.T.copy()
            H = state.H.copy()
            n = plan.n_owned
            t0 = timer()
            for _ in range(trial_steps):
                amb = plan.ambient(T)
                dt = problem.config.safety * plan.timestep_bound(T, amb, state.t)
                C, r = plan.assemble(T, H, amb, state.t)
                T[:n] = explicit_update(T[:n], C, r, dt)
                plan.enthalpy(T, H)
            best = min(best, timer() - t0)
        seconds.append(best)
    tuning = timer() - t_start
    timings = dict(zip(candidates, seconds))
    chosen = choose_block_count(timings)
    overhead = float("nan")
    if total_steps:
        projected = timings[chosen] / trial_steps * total_steps
        overhead = tuning / (tuning + projected)
    return TuneReport(candidates, seconds, chosen, overhead)


def improvement_factor(t_reference, t_blocked):
    """Reference (unblocked) time over cache-blocked time."""
    if t_reference <= 0 or t_blocked <= 0:
        raise ValueError("times must be positive")
    return t_reference / t_blocked
