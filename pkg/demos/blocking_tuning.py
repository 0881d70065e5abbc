"""Block-count sweep and the short-trial autotuner.

Times a fixed number of explicit steps with the traditional sweep and with
several cache-block counts, checks each run against the single-block
result, then lets the autotuner pick a count from a few trial steps.

    python3 demos/blocking_tuning.py --n 12 --steps 30
"""
import argparse
import time

import numpy as np

from cachefem.blocked import autotune_block_count, blocked_step, build_block_plan, run
from cachefem.fem import GlobalAssembly, initial_state, mesh_geometry
from cachefem.fixtures import cast_in_mold_problem
from cachefem.mesh import build_dual_graph


def timed(stepper, state, steps):
    t0 = time.perf_counter()
    _, end = run(stepper, state, steps=steps)
    return time.perf_counter() - t0, end


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=12)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--blocks", default="1,2,4,8,16,32,64")
    args = ap.parse_args()

    prob = cast_in_mold_problem(args.n, pad=2)
    state = initial_state(prob)
    geometry = mesh_geometry(prob.mesh)
    dual = build_dual_graph(prob.mesh)
    print(f"{prob.mesh.n_elements} tets, {prob.mesh.n_nodes} nodes, {args.steps} steps")

    asm = GlobalAssembly(prob, geometry)
    t_ref, ref = timed(asm.step, state, args.steps)
    print(f"{'traditional':>12} {t_ref:8.3f} s")
    print(f"{'blocks':>12} {'seconds':>8} {'factor':>7} {'slots':>8} {'KiB/block':>10} {'dev':>8}")
    for b in (int(v) for v in args.blocks.split(",")):
        plan = build_block_plan(prob, b, geometry=geometry, dual=dual)
        sec, end = timed(lambda s, dt: blocked_step(plan, s, prob, dt), state, args.steps)
        dev = np.max(np.abs(end.T - ref.T)) / np.max(np.abs(ref.T))
        print(f"{b:12d} {sec:8.3f} {t_ref / sec:7.2f} {plan.total_slots:8d} "
              f"{plan.mean_block_bytes() / 1024:10.1f} {dev:8.1e}")

    rep = autotune_block_count(prob, state, total_steps=args.steps, geometry=geometry)
    print(f"\nautotuner tried {rep.candidates}, chose {rep.chosen} "
          f"(tuning took {rep.overhead:.0%} of the projected run)")


if __name__ == "__main__":
    main()
