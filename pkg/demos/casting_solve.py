"""Cool an aluminium cube in a sand mold and report the cooling curve.

The cast starts at 1000 K, the mold at 300 K; heat crosses the cast/mold
contact through an interface coefficient and leaves the mold by convection.
Latent heat is released between the solidus (900 K) and liquidus (933 K).

    python3 demos/casting_solve.py --n 6 --t-end 60
"""
import argparse

import numpy as np

from cachefem.blocked import solve
from cachefem.fixtures import cast_in_mold_problem


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=6, help="cast cells per side")
    ap.add_argument("--t-end", type=float, default=60.0, help="simulated seconds")
    ap.add_argument("--blocks", default="1")
    ap.add_argument("--plot", help="write the cooling curve to this PNG")
    args = ap.parse_args()

    prob = cast_in_mold_problem(args.n, pad=2, safety=0.9)
    mesh = prob.mesh
    print(f"mesh: {mesh.n_elements} tets, {mesh.n_nodes} nodes, "
          f"{len(prob.pairing)} interface facet pairs")
    cast_nodes = np.unique(mesh.tets[mesh.regions == 0])
    blocks = args.blocks if args.blocks == "auto" else int(args.blocks)

    times, hottest, coldest = [], [], []
    state = None
    for t in np.linspace(0, args.t_end, 13)[1:]:
        _, state = solve(prob, blocks=blocks, t_end=t, state=state)
        Tc = state.T[cast_nodes]
        times.append(state.t)
        hottest.append(Tc.max())
        coldest.append(Tc.min())
        solid = np.mean(Tc < prob.materials[0].solidus)
        print(f"t={state.t:7.2f} s  step={state.step:6d}  cast T in "
              f"[{Tc.min():7.2f}, {Tc.max():7.2f}] K  solid fraction {solid:5.1%}")
    clamped = sum(m.clamp_count for m in prob.materials.values())
    print(f"enthalpy lookups outside the tabulated range: {clamped}")

    if args.plot:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(times, hottest, label="cast max")
        ax.plot(times, coldest, label="cast min")
        ax.axhspan(prob.materials[0].solidus, prob.materials[0].liquidus, alpha=0.2,
                   label="mushy range")
        ax.set_xlabel("t [s]")
        ax.set_ylabel("T [K]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
        print(f"wrote {args.plot}")


if __name__ == "__main__":
    main()
