#!/usr/bin/env python3
"""Cluttered single-agent experiment: 200 cylinders in 26 x 20 x 3 m.

Per seed, a fresh map is generated and one agent crosses the field between
random edge points. Reports the success rate over all seeds.

Expects configs/lib181.mplib to exist (run scripts/build_all_libraries.py).
"""

import argparse
from pathlib import Path

import numpy as np

from mpswarm.metrics import audit_run, build_metrics
from mpswarm.replan import Bounds, PlannerConfig, Replanner
from mpswarm.sim import SimConfig, SwarmSim
from mpswarm.store import load_library, load_relations
from mpswarm.world import MapSpec, generate_map

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--obstacles", type=int, default=200)
    ap.add_argument("--library", default=str(CONFIGS / "lib181.mplib"))
    args = ap.parse_args()

    lib, sha = load_library(args.library)
    rel = load_relations(Path(args.library).with_suffix(".mprel"), sha)
    # mean diameter 0.6 m: the ~15% occupancy-ratio field (mean radius 0.6
    # would leave no connected inflated free space across the region)
    spec = MapSpec(
        n_obstacles=args.obstacles,
        region_lo=(-13.0, -10.0, 0.0),
        region_hi=(13.0, 10.0, 3.0),
        radius_range=(0.15, 0.45),
        clearance_m=1.5,
        surface_spacing=0.05,
    )
    planner_cfg = PlannerConfig(
        bounds=Bounds(
            lo=np.array([-19.5, -10.0, 0.3]), hi=np.array([19.5, 10.0, 2.7])
        ),
        cloud_budget=400000,
    )

    successes = 0
    print("seed  reached  time_s   dist_m  min_clear_m  replans  emergencies")
    for seed in range(args.seeds):
        rng = np.random.default_rng(seed)
        start = np.array([-18.0, rng.uniform(-9.0, 9.0), 1.0])
        goal = np.array([18.0, rng.uniform(-9.0, 9.0), 1.0])
        world = generate_map(spec, seed=seed, protected=np.vstack([start, goal]))
        planner = Replanner(lib, rel, planner_cfg)
        sim = SwarmSim(
            planner, start[None], goal[None], world=world,
            config=SimConfig(seed=seed, timeout_s=180.0),
        )
        result = sim.run()
        audit = audit_run(result, r_robot=rel.r_robot)
        m = build_metrics(result, audit).agents[0]
        ok = m.reached and not audit.obstacle_violation_agents
        successes += ok
        print(
            f"{seed:4d}  {'yes' if m.reached else 'no':7s} "
            f"{m.flight_time_s:7.2f} {m.flight_distance_m:8.2f} "
            f"{m.min_obstacle_clearance_m:11.3f}  {m.replans:7d}  {m.emergencies:11d}"
        )
    rate = successes / args.seeds
    print(f"\nsuccess rate: {successes}/{args.seeds} = {rate:.1%}")
    return 0 if rate >= 0.95 else 1


if __name__ == "__main__":
    raise SystemExit(main())
