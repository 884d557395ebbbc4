"""Print the leader-independent floor of the certified bound B next to what compress reaches.

Usage: python scripts/floor_analysis.py [--seeds 3] [--max-k 4]
"""

import argparse

from polycomp.envs import RiverSwimParams, gridworld, river_swim, single_state
from polycomp.game import GdaConfig
from polycomp.guarantee import bound_floor
from polycomp.psca import compress


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--max-k", type=int, default=4)
    args = ap.parse_args()
    cfg = GdaConfig(leader_rate=0.005, follower_rate=0.1)
    cases = [
        ("river-swim gamma=0.95", river_swim()[0], 10.0),
        ("river-swim gamma=0.90", river_swim(RiverSwimParams(discount=0.9))[0], 10.0),
        ("grid-3x3", gridworld(3, 3), 40.0),
        ("single-state A=3", single_state(3), 3.5),
    ]
    print(f"{'instance':24s} {'sigma':>6s} {'floor':>8s}  B per K (seed: trace)")
    for name, cmp, sigma in cases:
        floor, _ = bound_floor(cmp)
        print(f"{name:24s} {sigma:6.1f} {floor:8.3f}")
        for seed in range(args.seeds):
            rep = compress(cmp, sigma, cfg, seed=seed, k_cap=args.max_k, z_restarts=2, check_dse=False)
            trace = " ".join(f"{b:.2f}" for b in rep.cover_bound_trace)
            print(f"{'':24s} {'':6s} {'':8s}  {seed}: {trace}{'  (certified)' if rep.converged else ''}")


if __name__ == "__main__":
    main()
