"""Benchmark harness: block-count sweeps, worker sweeps and reports.

Every timed run is first checked against a serial single-block solve of the
same fixture; only runs within ``ORACLE_RTOL`` produce a timing row. Timings
cover assembly, merge and update; mesh generation, partitioning and plan
construction are excluded.

Outputs (CSV is the contract, plots are optional):

``blocks.csv``
    fixture, variant, blocks, seconds, improvement, total_nodes, mean_block_bytes
``speedup.csv``
    fixture, workers, seconds, speedup, cache_blocked
``reorder.csv``
    fixture, nodes, bandwidth_before, bandwidth_after, seconds_original,
    seconds_rcm, gain
``partition.csv``
    fixture, k, augmented, edge_cut, imbalance, split_pairs
``tune.csv``
    fixture, variant, blocks, seconds
``machine.json``, ``summary.json``
"""
from __future__ import annotations

import csv
import glob
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .blocked import autotune_block_count, blocked_step, build_block_plan, run
from .fem import GlobalAssembly, Problem, initial_state, mesh_geometry
from .fixtures import FixtureSpec, generate_fixture
from .mesh import build_dual_graph, build_node_graph
from .parallel import parallel_solve, partition_workers
from .partition import partition_metrics, split_interface_pairs
from .reorder import bandwidth, permute_field, permute_mesh, rcm_permutation

log = logging.getLogger(__name__)

ORACLE_RTOL = 1e-10

SUITES = {
    "quick": dict(
        fixtures=[FixtureSpec(n=10, pad=2, name="cast-n10"),
                  FixtureSpec(n=6, pad=2, refine=2, name="cast-n6-fine-mold")],
        blocks=[1, 2, 4, 8, 16, 32], workers=[1, 2, 4], steps=20, parts=6),
    "full": dict(
        fixtures=[FixtureSpec(n=12, pad=2, name="cast-n12"),
                  FixtureSpec(n=20, pad=3, name="cast-n20"),
                  FixtureSpec(n=10, pad=3, refine=2, name="cast-n10-fine-mold"),
                  FixtureSpec(n=32, pad=4, name="cast-n32")],
        blocks=[1, 2, 4, 8, 16, 32, 64, 128, 256], workers=[1, 2, 4, 8], steps=50,
        parts=6),
}


def machine_descriptor():
    """CPU model, core count and cache sizes where the system exposes them."""
    desc = {"platform": platform.platform(), "python": platform.python_version(),
            "numpy": np.__version__, "cpus": os.cpu_count(), "cpu_model": platform.processor()}
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    desc["cpu_model"] = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    caches = {}
    for d in sorted(glob.glob("/sys/devices/system/cpu/cpu0/cache/index*")):
        try:
            with open(os.path.join(d, "level")) as fh:
                level = fh.read().strip()
            with open(os.path.join(d, "type")) as fh:
                kind = fh.read().strip()
            with open(os.path.join(d, "size")) as fh:
                size = fh.read().strip()
        except OSError:
            continue
        caches[f"L{level}{'' if kind == 'Unified' else kind[0].lower()}"] = size
    desc["caches"] = caches
    return desc


def _rel_dev(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@dataclass
class BenchReport:
    suite: str
    blocks: list = field(default_factory=list)
    speedup: list = field(default_factory=list)
    reorder: list = field(default_factory=list)
    partition: list = field(default_factory=list)
    tune: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    machine: dict = field(default_factory=dict)
    tune_overhead: dict = field(default_factory=dict)
    elapsed: float = 0.0

    def write(self, out_dir, plots=True):
        os.makedirs(out_dir, exist_ok=True)
        tables = {
            "blocks.csv": ("fixture", "variant", "blocks", "seconds", "improvement",
                           "total_nodes", "mean_block_bytes"),
            "speedup.csv": ("fixture", "workers", "seconds", "speedup", "cache_blocked"),
            "reorder.csv": ("fixture", "nodes", "bandwidth_before", "bandwidth_after",
                            "seconds_original", "seconds_rcm", "gain"),
            "partition.csv": ("fixture", "k", "augmented", "edge_cut", "imbalance",
                              "split_pairs"),
            "tune.csv": ("fixture", "variant", "blocks", "seconds"),
        }
        for name, cols in tables.items():
            rows = getattr(self, name[:-4])
            with open(os.path.join(out_dir, name), "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=cols)
                w.writeheader()
                w.writerows(rows)
        with open(os.path.join(out_dir, "machine.json"), "w") as fh:
            json.dump(self.machine, fh, indent=2)
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump({"suite": self.suite, "elapsed_seconds": self.elapsed,
                       "failures": self.failures, "tune_overhead": self.tune_overhead},
                      fh, indent=2)
        if plots:
            self.plot(out_dir)

    def plot(self, out_dir):
        try:
            import matplotlib
            matplotlib.use("Agg")
            import matplotlib.pyplot as plt
        except ImportError:
            log.info("matplotlib not installed; skipping plots")
            return []
        made = []
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for (fx, var) in sorted({(r["fixture"], r["variant"]) for r in self.blocks}):
            rows = [r for r in self.blocks if r["fixture"] == fx and r["variant"] == var]
            ax.plot([r["blocks"] for r in rows], [r["improvement"] for r in rows], "o-",
                    label=f"{fx} ({var})")
        ax.set_xscale("log", base=2)
        ax.set_xlabel("blocks")
        ax.set_ylabel("improvement factor")
        ax.legend(fontsize=7)
        fig.tight_layout()
        made.append(os.path.join(out_dir, "improvement.png"))
        fig.savefig(made[-1], dpi=120)
        plt.close(fig)

        fig, ax = plt.subplots(figsize=(5, 3.5))
        for fx in sorted({r["fixture"] for r in self.speedup}):
            for cb in (False, True):
                rows = [r for r in self.speedup if r["fixture"] == fx and r["cache_blocked"] == cb]
                if rows:
                    ax.plot([r["workers"] for r in rows], [r["speedup"] for r in rows], "o-",
                            label=f"{fx} ({'cache-blocked' if cb else 'traditional'})")
        ax.set_xlabel("workers")
        ax.set_ylabel("speedup")
        ax.legend(fontsize=7)
        fig.tight_layout()
        made.append(os.path.join(out_dir, "speedup.png"))
        fig.savefig(made[-1], dpi=120)
        plt.close(fig)
        return made


def _time_steps(stepper, state, steps):
    t0 = time.perf_counter()
    _, final = run(stepper, state, steps=steps)
    return time.perf_counter() - t0, final


def _rcm_problem(problem: Problem):
    g = build_node_graph(problem.mesh)
    p = rcm_permutation(g)
    mesh = permute_mesh(problem.mesh, p)
    return (Problem(mesh, problem.materials, problem.conditions, problem.config),
            p, bandwidth(g), bandwidth(g, p))


def bench_fixture(report: BenchReport, label, problem, blocks, workers, steps, parts):
    """Block sweep on both node orderings, then the worker sweep."""
    variants = {"original": problem}
    rcm, perm, bw0, bw1 = _rcm_problem(problem)
    variants["rcm"] = rcm
    trad_time = {}
    best_blocks = 1
    oracle_T = None  # serial field on the original numbering
    for var, prob in variants.items():
        state = initial_state(prob)
        geometry = mesh_geometry(prob.mesh)
        dual = build_dual_graph(prob.mesh)
        asm = GlobalAssembly(prob, geometry)
        t_ref, ref = _time_steps(asm.step, state, steps)
        plan1 = build_block_plan(prob, 1, geometry=geometry)
        _, oracle = run(lambda s, dt: blocked_step(plan1, s, prob, dt), state, steps=steps)
        dev = _rel_dev(ref.T, oracle.T)
        if dev > ORACLE_RTOL:
            report.failures.append(dict(fixture=label, variant=var, run="traditional",
                                        deviation=dev))
            continue
        if var == "rcm":
            back = permute_field(oracle.T, np.argsort(perm))
            if oracle_T is not None and _rel_dev(back, oracle_T) > ORACLE_RTOL:
                report.failures.append(dict(fixture=label, variant=var, run="rcm-vs-original",
                                            deviation=_rel_dev(back, oracle_T)))
        else:
            oracle_T = oracle.T
        trad_time[var] = t_ref
        times = {}
        for b in blocks:
            if b > prob.mesh.n_elements // 8:
                continue
            plan = build_block_plan(prob, b, geometry=geometry, dual=dual)
            sec, final = _time_steps(lambda s, dt: blocked_step(plan, s, prob, dt), state,
                                     steps)
            dev = _rel_dev(final.T, oracle.T)
            if dev > ORACLE_RTOL:
                report.failures.append(dict(fixture=label, variant=var, run=f"blocks={b}",
                                            deviation=dev))
                continue
            times[b] = sec
            report.blocks.append(dict(fixture=label, variant=var, blocks=b, seconds=sec,
                                      improvement=t_ref / sec, total_nodes=plan.total_slots,
                                      mean_block_bytes=plan.mean_block_bytes()))
        if var == "original" and times:
            best_blocks = min(times, key=times.get)
        cands = [b for b in blocks if b <= prob.mesh.n_elements // 8]
        tr = autotune_block_count(prob, state, candidates=cands, total_steps=steps,
                                  geometry=geometry)
        report.tune.extend(dict(fixture=label, variant=var, blocks=b, seconds=s)
                           for b, s in tr.rows())
        report.tune_overhead[f"{label}/{var}"] = dict(chosen=tr.chosen, overhead=tr.overhead)
    if "original" in trad_time and "rcm" in trad_time:
        report.reorder.append(dict(fixture=label, nodes=problem.mesh.n_nodes,
                                   bandwidth_before=bw0, bandwidth_after=bw1,
                                   seconds_original=trad_time["original"],
                                   seconds_rcm=trad_time["rcm"],
                                   gain=trad_time["original"] / trad_time["rcm"] - 1.0))

    dual = build_dual_graph(problem.mesh)
    for augment in (True, False):
        pm = partition_workers(problem, parts, augment=augment, dual=dual)
        q = partition_metrics(dual, pm)
        report.partition.append(dict(fixture=label, k=parts, augmented=augment,
                                     edge_cut=q.edge_cut, imbalance=q.imbalance,
                                     split_pairs=split_interface_pairs(
                                         problem.mesh, problem.pairing, pm)))

    reference = None
    for cache_blocked in (False, True):
        for w in workers:
            nb = max(1, best_blocks // w) if cache_blocked else 1
            res = parallel_solve(problem, w, nb, steps=steps)
            dev = _rel_dev(res.state.T, oracle_T) if oracle_T is not None else np.inf
            if dev > ORACLE_RTOL:
                report.failures.append(dict(fixture=label, variant="parallel",
                                            run=f"workers={w},blocks={nb}", deviation=dev))
                continue
            if reference is None and w == 1 and not cache_blocked:
                reference = res.seconds
            if reference is None:
                continue
            report.speedup.append(dict(fixture=label, workers=w, seconds=res.seconds,
                                       speedup=reference / res.seconds,
                                       cache_blocked=cache_blocked))


def run_benchmark(suite="quick", out_dir=None, plots=True, fixtures=None, blocks=None,
                  workers=None, steps=None) -> BenchReport:
    """Run a named suite; the keyword arguments override its settings."""
    if suite not in SUITES:
        raise ValueError(f"unknown suite {suite!r}; choose from {sorted(SUITES)}")
    cfg = dict(SUITES[suite])
    for key, val in (("fixtures", fixtures), ("blocks", blocks), ("workers", workers),
                     ("steps", steps)):
        if val is not None:
            cfg[key] = val
    t0 = time.perf_counter()
    report = BenchReport(suite, machine=machine_descriptor())
    for spec in cfg["fixtures"]:
        fx = generate_fixture(spec)
        log.info("fixture %s: %d elements, %d nodes", spec.label, fx.mesh.n_elements,
                 fx.mesh.n_nodes)
        bench_fixture(report, spec.label, fx.problem, cfg["blocks"], cfg["workers"],
                      cfg["steps"], cfg["parts"])
    report.elapsed = time.perf_counter() - t0
    if out_dir is not None:
        report.write(out_dir, plots)
    return report
