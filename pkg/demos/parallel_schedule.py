"""Communication graph, staged exchange schedule and a threaded run.

Splits a cast-in-mold mesh among workers, prints which workers must talk
to each other and the edge-coloured stages they do it in, then runs the
threaded solver and compares it with the serial one.

    python3 demos/parallel_schedule.py --workers 5 --steps 20
"""
import argparse

import numpy as np

from cachefem.blocked import solve
from cachefem.fixtures import cast_in_mold_problem
from cachefem.parallel import parallel_solve, partition_workers, setup_workers


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--workers", type=int, default=5)
    ap.add_argument("--blocks", default="1", help="blocks per worker, or 'auto'")
    ap.add_argument("--steps", type=int, default=20)
    args = ap.parse_args()

    prob = cast_in_mold_problem(args.n, pad=2)
    pm = partition_workers(prob, args.workers)
    setups, sched, graph = setup_workers(prob, pm)
    print(f"{args.workers} workers, element counts {pm.sizes().tolist()}")
    for ws in setups:
        nb = {q: int(v.size) for q, v in ws.buffers.shared.items()}
        ext = sum(int(v.size) for v in ws.buffers.recv_temp.values())
        print(f"  worker {ws.rank}: {ws.n_owned} nodes, shared with {nb}, {ext} external")
    print(f"communication graph: {len(graph.edges)} edges, max degree {graph.max_degree}")
    for s, pairs in enumerate(sched.stages):
        idle = sorted(set(range(args.workers)) - {w for p in pairs for w in p})
        print(f"  stage {s}: pairs {list(pairs)}, idle {idle}")

    blocks = args.blocks if args.blocks == "auto" else int(args.blocks)
    res = parallel_solve(prob, args.workers, blocks, steps=args.steps, partmap=pm)
    _, ref = solve(prob, blocks=1, steps=args.steps)
    dev = np.max(np.abs(res.state.T - ref.T)) / np.max(np.abs(ref.T))
    print(f"{args.steps} steps in {res.seconds:.2f} s, blocks per worker "
          f"{res.block_counts}, deviation from serial {dev:.1e}")


if __name__ == "__main__":
    main()
