#!/usr/bin/env python3
"""Circle-swap experiment: 8 agents on a 12 m radius circle, 10 seeds.

Reference values for this setup: mean flight time ~24 s, mean flight
distance ~24 m, minimum inter-agent distance ~0.29 m, zero collisions.

Expects configs/lib73.mplib to exist (run scripts/build_all_libraries.py).
"""

import argparse
from pathlib import Path

import numpy as np

from mpswarm.config import circle_layout
from mpswarm.metrics import audit_run, build_metrics
from mpswarm.replan import PlannerConfig, Replanner
from mpswarm.sim import SimConfig, SwarmSim
from mpswarm.store import load_library, load_relations

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--agents", type=int, default=8)
    ap.add_argument("--radius", type=float, default=12.0)
    ap.add_argument("--library", default=str(CONFIGS / "lib73.mplib"))
    args = ap.parse_args()

    lib, sha = load_library(args.library)
    rel = load_relations(Path(args.library).with_suffix(".mprel"), sha)
    starts, goals = circle_layout(args.agents, args.radius)

    times, dists, minpairs = [], [], []
    collisions = 0
    unfinished = 0
    print("seed  reached  mean_time_s  mean_dist_m  min_pair_m  colliding")
    for seed in range(args.seeds):
        planner = Replanner(lib, rel, PlannerConfig())
        sim = SwarmSim(
            planner, starts, goals,
            config=SimConfig(seed=seed, timeout_s=90.0),
        )
        result = sim.run()
        audit = audit_run(result, r_robot=rel.r_robot)
        m = build_metrics(result, audit)
        s = m.summary
        times.append(s["mean_flight_time_s"])
        dists.append(s["mean_flight_distance_m"])
        minpairs.append(s["min_pair_distance_m"])
        collisions += s["colliding_pairs"]
        unfinished += s["n_agents"] - s["n_reached"]
        print(
            f"{seed:4d}  {s['n_reached']:2d}/{s['n_agents']:<4d} "
            f"{s['mean_flight_time_s']:11.3f}  {s['mean_flight_distance_m']:11.3f}  "
            f"{s['min_pair_distance_m']:10.3f}  {s['colliding_pairs']:9d}"
        )
    print(
        f"\nall seeds: mean time {np.mean(times):.3f} s, "
        f"mean dist {np.mean(dists):.3f} m, "
        f"min pair {np.min(minpairs):.3f} m, "
        f"collisions {collisions}, unfinished {unfinished}"
    )
    return 0 if collisions == 0 and unfinished == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
