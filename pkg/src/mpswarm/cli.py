"""Command-line entry points: offline builds, single plans, sims, benches.

Exit codes: 0 success (including valid EMERGENCY_STOP / timeout outcomes),
1 usage error, 2 configuration error, 3 runtime failure. Log verbosity comes
from the MPSWARM_LOG environment variable (DEBUG, INFO, WARNING, ...).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """argparse defaults to exit code 2 on usage errors; we reserve 2 for
    config problems, so usage errors exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _triple(text: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z - got {text!r}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad coordinate in {text!r}") from None


def _size(path) -> str:
    n = os.path.getsize(path)
    if n >= 1 << 20:
        return f"{n / (1 << 20):.1f} MiB"
    return f"{n / (1 << 10):.1f} KiB"


# -- build-library -----------------------------------------------------------


def cmd_build_library(args) -> int:
    from .config import load_library_spec
    from .occupancy import build_relations_for_library
    from .store import save_library, save_relations
    from .topp import build_library

    spec = load_library_spec(args.config)
    out = Path(args.out) if args.out else Path(args.config).with_suffix(".mplib")
    rel_out = Path(args.relations) if args.relations else out.with_suffix(".mprel")

    t0 = time.perf_counter()
    lib = build_library(spec.library, spec.params)
    t_build = time.perf_counter() - t0
    if not lib.primitives:
        raise RuntimeError(
            "no feasible primitives: every (path, start speed) pair failed "
            "parameterization; relax the limits or shorten the paths"
        )
    print(f"paths: {len(lib.paths)}")
    print(
        f"primitives: {len(lib.primitives)} "
        f"({len(lib.dropped_pairs)} infeasible pairs dropped)"
    )
    print(f"parameterization: {t_build:.1f} s")
    sha = save_library(out, lib)
    print(f"library: {out} ({_size(out)}, sha256 {sha[:12]})")

    if args.skip_relations:
        return 0
    t0 = time.perf_counter()
    rel = build_relations_for_library(lib, **spec.occupancy)
    t_rel = time.perf_counter() - t0
    save_relations(rel_out, rel, sha)
    dims = "x".join(str(int(d)) for d in rel.grid.dims)
    print(
        f"relations: {rel_out} ({_size(rel_out)}, {t_rel:.1f} s; "
        f"grid {dims} @ {rel.grid.resolution:g} m, "
        f"d1 {rel.d1:.3f} m, d2 {rel.d2:.3f} m)"
    )
    return 0


# -- plan ---------------------------------------------------------------------


def _load_cloud(path) -> np.ndarray:
    from .config import ConfigError

    try:
        cloud = np.load(path)
    except Exception as exc:
        raise ConfigError(f"cannot read cloud file {path}: {exc}") from None
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ConfigError(
            f"cloud file {path} must hold an (n, 3) array, got {cloud.shape}"
        )
    return cloud


def cmd_plan(args) -> int:
    from .replan import AgentState, PlannerConfig, PlanOutcome, Replanner
    from .store import load_library, load_relations

    lib, sha = load_library(args.library)
    rel = load_relations(args.relations, expected_library_hash=sha)
    cloud = _load_cloud(args.cloud) if args.cloud else np.empty((0, 3))
    planner = Replanner(lib, rel, PlannerConfig())
    state = AgentState(position=args.position, velocity=args.velocity)

    result = planner.replan(state, args.goal, cloud, [], 0.0)
    print(f"outcome: {result.outcome.name}")
    print(
        f"candidates: {result.n_candidates}  "
        f"obstacle-flagged: {result.n_obstacle_flagged}  "
        f"agent-flagged: {result.n_agent_flagged}"
    )
    print(f"compute: {result.compute_s * 1e3:.3f} ms")
    if result.outcome is PlanOutcome.PLANNED:
        plan = result.plan
        prim = lib.primitives[plan.prim_id]
        end_w = plan.rotation @ prim.end_point + plan.origin
        print(
            f"selected: primitive {plan.prim_id} "
            f"(path {prim.path_index}, start speed {prim.start_speed:g} m/s, "
            f"duration {prim.duration:.2f} s)"
        )
        print(f"cost: {result.cost:.6f}")
        print(f"end point: {end_w[0]:.3f},{end_w[1]:.3f},{end_w[2]:.3f}")

    if args.dump_costs:
        ids, costs, flagged = planner.score_scan(
            state, args.goal, cloud, [], 0.0
        )
        with open(args.dump_costs, "w") as fh:
            fh.write("prim_id,cost,flagged\n")
            for pid, c, f in zip(ids, costs, flagged):
                fh.write(f"{pid},{c:.12g},{int(f)}\n")
        print(f"costs: {args.dump_costs} ({len(ids)} rows)")
    return 0


# -- sim ----------------------------------------------------------------------


def cmd_sim(args) -> int:
    from .config import ConfigError, load_scenario
    from .metrics import (
        audit_run,
        build_metrics,
        write_metrics_csv,
        write_summary_json,
    )
    from .replan import Replanner
    from .sim import SwarmSim
    from .store import load_library, load_relations
    from .world import generate_map

    spec = load_scenario(args.scenario)
    if args.seed is not None:
        spec.sim.seed = args.seed
    if args.scheduler:
        spec.sim.scheduler = args.scheduler
    try:
        lib, sha = load_library(spec.library_file)
        rel = load_relations(spec.relations_file, expected_library_hash=sha)
    except FileNotFoundError as exc:
        raise ConfigError(f"missing input file: {exc.filename}") from None

    world = None
    if spec.map_spec is not None:
        protected = np.vstack([spec.starts, spec.goals])
        world = generate_map(spec.map_spec, seed=spec.map_seed, protected=protected)
        print(
            f"map: {len(world.cylinders)} cylinders, {len(world.boxes)} boxes, "
            f"{len(world.surface_points)} surface points (seed {spec.map_seed})"
        )

    planner = Replanner(lib, rel, spec.planner)
    sim = SwarmSim(planner, spec.starts, spec.goals, world=world, config=spec.sim)
    result = sim.run()
    audit = audit_run(result, r_robot=rel.r_robot)
    metrics = build_metrics(result, audit)

    s = metrics.summary
    print(
        f"agents: {s['n_reached']}/{s['n_agents']} reached "
        f"(sim {s['sim_time_s']:.1f} s, wall {s['wall_time_s']:.1f} s)"
    )
    if s["n_reached"] < s["n_agents"]:
        print(f"TIMEOUT: {s['n_agents'] - s['n_reached']} agents unfinished")
    print(
        f"safety: min pair {s['min_pair_distance_m']} m, "
        f"colliding pairs {s['colliding_pairs']}, "
        f"obstacle violations {s['obstacle_violations']}"
    )
    if s["replan_compute"]["count"]:
        rc = s["replan_compute"]
        print(
            f"replan compute: p50 {rc['p50_ms']:.3f} ms, "
            f"p90 {rc['p90_ms']:.3f} ms, max {rc['max_ms']:.3f} ms "
            f"({rc['count']} replans)"
        )

    csv_path = Path(args.csv) if args.csv else spec.csv_path
    json_path = Path(args.json) if args.json else spec.json_path
    if csv_path:
        write_metrics_csv(csv_path, metrics.agents)
        print(f"csv: {csv_path}")
    if json_path:
        write_summary_json(json_path, metrics)
        print(f"json: {json_path}")
    return 0


# -- bench ----------------------------------------------------------------------


def _percentiles(samples_s: list[float]) -> tuple[float, float, float, float]:
    ms = np.asarray(samples_s) * 1e3
    return (
        float(np.percentile(ms, 50)),
        float(np.percentile(ms, 90)),
        float(np.percentile(ms, 99)),
        float(ms.max()),
    )


def cmd_bench(args) -> int:
    from .collision import mark_agent_conflicts, mark_obstacle_conflicts
    from .config import load_library_spec
    from .occupancy import build_relations_for_library
    from .replan import AgentPlan
    from .topp import build_library

    rows = []
    header = (
        "suite,n_paths,n_prims,resolution_m,cloud_points,n_peers,checks,"
        "p50_ms,p90_ms,p99_ms,max_ms,build_s,relations_s"
    )
    rng = np.random.default_rng(args.seed)

    for cfg_path in args.library_config:
        spec = load_library_spec(cfg_path)
        params = dataclasses.replace(spec.params, stages=args.stages)
        t0 = time.perf_counter()
        lib = build_library(spec.library, params)
        build_s = time.perf_counter() - t0
        n_prims = len(lib.primitives)
        all_prims = np.arange(n_prims, dtype=np.int64)

        resolutions = (
            args.resolution
            if args.suite == "obstacle"
            else [spec.occupancy["s_res"]]
        )
        for res in resolutions:
            occ = dict(spec.occupancy)
            occ["s_res"] = res
            t0 = time.perf_counter()
            rel = build_relations_for_library(lib, **occ)
            rel_s = time.perf_counter() - t0
            lo, hi = rel.grid.min_corner, rel.grid.max_corner

            if args.suite == "obstacle":
                for n_cloud in args.cloud:
                    cloud = rng.uniform(lo, hi, size=(n_cloud, 3))
                    samples = []
                    for _ in range(args.checks):
                        mask = np.zeros(n_prims, dtype=bool)
                        t0 = time.perf_counter()
                        mark_obstacle_conflicts(cloud, rel, all_prims, mask)
                        samples.append(time.perf_counter() - t0)
                    p50, p90, p99, mx = _percentiles(samples)
                    rows.append(
                        f"obstacle,{len(lib.paths)},{n_prims},{res:g},"
                        f"{n_cloud},,{args.checks},"
                        f"{p50:.4f},{p90:.4f},{p99:.4f},{mx:.4f},"
                        f"{build_s:.2f},{rel_s:.2f}"
                    )
                    print(rows[-1])
            else:
                for n_peers in args.peers:
                    peers = []
                    for k in range(n_peers):
                        yaw = rng.uniform(0, 2 * np.pi)
                        c, s = np.cos(yaw), np.sin(yaw)
                        rot = np.array(
                            [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
                        )
                        origin = rng.uniform(-3.0, 3.0, size=3)
                        pid = int(rng.integers(n_prims))
                        prim = lib.primitives[pid]
                        peers.append(
                            AgentPlan(
                                prim_id=pid,
                                speed_index=prim.speed_index,
                                rotation=rot,
                                origin=origin,
                                t_start=0.0,
                                duration=prim.duration,
                            ).as_peer(1000 + k)
                        )
                    eye = np.eye(3)
                    zero = np.zeros(3)
                    samples = []
                    for _ in range(args.checks):
                        mask = np.zeros(n_prims, dtype=bool)
                        t0 = time.perf_counter()
                        mark_agent_conflicts(
                            peers, eye, zero, 0.0, 0.0, rel, all_prims,
                            mask, lib,
                        )
                        samples.append(time.perf_counter() - t0)
                    p50, p90, p99, mx = _percentiles(samples)
                    rows.append(
                        f"agents,{len(lib.paths)},{n_prims},{res:g},,"
                        f"{n_peers},{args.checks},"
                        f"{p50:.4f},{p90:.4f},{p99:.4f},{mx:.4f},"
                        f"{build_s:.2f},{rel_s:.2f}"
                    )
                    print(rows[-1])

    if args.out:
        with open(args.out, "w") as fh:
            fh.write(header + "\n")
            fh.write("\n".join(rows) + "\n")
        print(f"bench csv: {args.out}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(
        prog="mpswarm",
        description="Motion-primitive swarm planning: build, plan, simulate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser(
        "build-library",
        help="build a primitive library and its occupancy relations",
    )
    b.add_argument("config", help="library config YAML")
    b.add_argument("-o", "--out", help="library output path (default: config stem + .mplib)")
    b.add_argument("--relations", help="relations output path (default: out stem + .mprel)")
    b.add_argument("--skip-relations", action="store_true")
    b.set_defaults(func=cmd_build_library)

    p = sub.add_parser("plan", help="run one replanning query and print it")
    p.add_argument("--library", required=True)
    p.add_argument("--relations", required=True)
    p.add_argument("--position", type=_triple, default=np.zeros(3))
    p.add_argument("--velocity", type=_triple, default=np.zeros(3))
    p.add_argument("--goal", type=_triple, required=True)
    p.add_argument("--cloud", help=".npy file with an (n, 3) point array")
    p.add_argument("--dump-costs", help="write per-primitive costs to this CSV")
    p.set_defaults(func=cmd_plan)

    s = sub.add_parser("sim", help="run a scenario and write metrics")
    s.add_argument("scenario", help="scenario config YAML")
    s.add_argument("--csv", help="override per-agent metrics CSV path")
    s.add_argument("--json", help="override summary JSON path")
    s.add_argument("--seed", type=int, help="override scenario seed")
    s.add_argument(
        "--scheduler", choices=["deterministic", "threaded"], default=None
    )
    s.set_defaults(func=cmd_sim)

    n = sub.add_parser("bench", help="time the collision checks, emit CSV")
    n.add_argument("suite", choices=["obstacle", "agents"])
    n.add_argument(
        "--library-config",
        nargs="+",
        required=True,
        help="library config YAMLs to sweep over",
    )
    n.add_argument("--cloud", type=int, nargs="+", default=[500, 2000, 5000])
    n.add_argument(
        "--resolution", type=float, nargs="+", default=[0.1, 0.2]
    )
    n.add_argument("--peers", type=int, nargs="+", default=[1, 2, 4, 8, 16])
    n.add_argument("--checks", type=int, default=100)
    n.add_argument("--stages", type=int, default=200,
                   help="TOPP stages for bench builds (timing-neutral)")
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("-o", "--out", help="bench CSV path")
    n.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("MPSWARM_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s"
    )
    from .config import ConfigError

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures -> 3, with traceback at DEBUG
        logger.debug("runtime failure", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
