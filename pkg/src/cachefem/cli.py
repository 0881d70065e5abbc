"""Command-line entry point: ``cachefem <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys

import numpy as np

from .errors import CommError, ConfigurationError, MeshError, PartitionError, SolverError


def _blocks_arg(text):
    if text == "auto":
        return text
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected an integer or 'auto'") from None
    if v < 1:
        raise argparse.ArgumentTypeError("block count must be >= 1")
    return v


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def cmd_generate(args):
    from .config import dump_config
    from .fixtures import FixtureSpec, generate_fixture
    from .mesh import save_mesh
    fx = generate_fixture(FixtureSpec(args.kind, args.n, args.pad, args.refine,
                                      shuffle=not args.no_shuffle, seed=args.seed))
    save_mesh(fx.mesh, args.output)
    if args.config_out:
        p = fx.problem
        with open(args.config_out, "w") as fh:
            fh.write(dump_config(p.materials, p.conditions, p.config))
    print(f"elements={fx.mesh.n_elements} nodes={fx.mesh.n_nodes}")


def cmd_reorder(args):
    from .mesh import build_node_graph, read_mesh, save_mesh
    from .reorder import reorder_mesh, write_sparsity_pattern
    mesh = read_mesh(args.mesh)
    new, perm, before, after = reorder_mesh(mesh)
    save_mesh(new, args.output)
    if args.permutation_out:
        np.savetxt(args.permutation_out, perm, fmt="%d")
    if args.pattern_out:
        g = build_node_graph(mesh)
        with open(args.pattern_out, "w") as fh:
            write_sparsity_pattern(g, fh, perm)
    print(f"bandwidth before={before} after={after}")


def cmd_partition(args):
    from .mesh import build_dual_graph, pair_sister_facets, read_mesh
    from .partition import (PartMap, augment_virtual_elements, partition_elements,
                            partition_metrics, plain_graph, split_interface_pairs,
                            subgraph)
    mesh = read_mesh(args.mesh)
    dual = build_dual_graph(mesh)
    pairing = pair_sister_facets(mesh)
    augment = not args.no_augment and len(pairing) > 0
    g = augment_virtual_elements(mesh, pairing, dual=dual) if augment else plain_graph(mesh, dual)
    pm = partition_elements(g, k=args.parts, balance_tol=args.balance_tol)
    if args.partmap_out:
        pm.save(args.partmap_out)
    if args.blocks > 1:
        flat = np.empty(mesh.n_elements, dtype=np.int64)
        for w in range(pm.k):
            els = pm.elements_of(w)
            bm = partition_elements(subgraph(dual, els), k=args.blocks,
                                    balance_tol=args.balance_tol)
            flat[els] = w * args.blocks + bm.part
        bpm = PartMap(flat, pm.k * args.blocks)
        if args.partmap_out:
            bpm.save(args.partmap_out + ".blocks")
        if args.metrics:
            q = partition_metrics(dual, bpm)
            print(f"blocks={bpm.k} block_edge_cut={q.edge_cut} "
                  f"block_imbalance={q.imbalance:.4f}")
    if args.metrics:
        q = partition_metrics(dual, pm)
        print(f"parts={pm.k} augmented={augment} edge_cut={q.edge_cut} "
              f"imbalance={q.imbalance:.4f} split_pairs={split_interface_pairs(mesh, pairing, pm)} "
              f"max_neighbors={int(q.neighbor_counts.max(initial=0))}")


def _load_problem(args):
    from .config import load_problem
    from .mesh import read_mesh
    return load_problem(read_mesh(args.mesh), args.config)


def _write_series(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t", "dt", "T_min", "T_max"])
        for r in series:
            w.writerow([r.step, repr(r.t), repr(r.dt), repr(r.T_min), repr(r.T_max)])


def cmd_solve(args):
    from .blocked import solve
    from .parallel import parallel_solve
    if args.transport == "tcp":
        raise ConfigurationError("the tcp transport is not available in this build; "
                                 "use --transport inproc")
    problem = _load_problem(args)
    steps = args.steps
    t_end = args.t_end if steps is None else None
    if args.workers == 1 and not args.schedule_out:
        series, state = solve(problem, blocks=args.blocks, steps=steps, t_end=t_end)
    else:
        res = parallel_solve(problem, args.workers, args.blocks, steps=steps, t_end=t_end)
        series, state = res.series, res.state
        if args.schedule_out:
            with open(args.schedule_out, "w") as fh:
                res.schedule.to_csv(fh)
        print(f"blocks_per_worker={','.join(map(str, res.block_counts))}")
    if args.series_out:
        _write_series(series, args.series_out)
    if args.field_out:
        np.savetxt(args.field_out, state.T)
    print(f"steps={state.step} t={state.t:.6g} T_min={state.T.min():.6g} "
          f"T_max={state.T.max():.6g}")


def cmd_tune(args):
    from .blocked import autotune_block_count
    from .fem import initial_state
    problem = _load_problem(args)
    rep = autotune_block_count(problem, initial_state(problem), candidates=args.candidates,
                               trial_steps=args.trial_steps)
    if args.output:
        with open(args.output, "w") as fh:
            rep.to_csv(fh)
    else:
        rep.to_csv(sys.stdout)
    print(f"# chosen={rep.chosen}", file=sys.stderr)


def cmd_bench(args):
    from .bench import run_benchmark
    rep = run_benchmark(args.suite, args.out, plots=not args.no_plots)
    print(f"suite={args.suite} seconds={rep.elapsed:.1f} blocks_rows={len(rep.blocks)} "
          f"speedup_rows={len(rep.speedup)} failures={len(rep.failures)} out={args.out}")
    if rep.failures:
        return 1
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="cachefem",
                                 description="Cache-blocked explicit FEM heat solver.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic fixture mesh (and config)")
    p.add_argument("--kind", default="cast_in_mold",
                   choices=["cast_in_mold", "cube", "bar", "two_cubes"])
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--pad", type=int, default=1)
    p.add_argument("--refine", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--config-out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("reorder", help="RCM-renumber a mesh")
    p.add_argument("mesh")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--permutation-out")
    p.add_argument("--pattern-out", help="sparsity pattern after reordering, 'row col' lines")
    p.set_defaults(func=cmd_reorder)

    p = sub.add_parser("partition", help="split elements among parts")
    p.add_argument("mesh")
    p.add_argument("--parts", type=int, required=True)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--partmap-out")
    p.add_argument("--metrics", action="store_true")
    p.add_argument("--balance-tol", type=float, default=0.05)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("solve", help="run the explicit solver")
    p.add_argument("mesh")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--blocks", type=_blocks_arg, default=1)
    p.add_argument("--transport", choices=["inproc", "tcp"], default="inproc")
    p.add_argument("--steps", type=int)
    p.add_argument("--t-end", type=float)
    p.add_argument("--schedule-out")
    p.add_argument("--series-out")
    p.add_argument("--field-out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("tune", help="time candidate block counts")
    p.add_argument("mesh")
    p.add_argument("--config", required=True)
    p.add_argument("--candidates", type=_int_list)
    p.add_argument("--trial-steps", type=int, default=10)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("bench", help="run a benchmark suite")
    p.add_argument("--suite", choices=["quick", "full"], default="quick")
    p.add_argument("--out", default="bench-out")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except (MeshError, ConfigurationError, PartitionError, SolverError, CommError,
            OSError) as exc:
        print(f"cachefem: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
