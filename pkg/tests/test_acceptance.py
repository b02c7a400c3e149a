"""Acceptance gate: ten end-to-end criteria for the shipped configuration.

Each criterion is one test that prints a single PASS/FAIL line with the
measured numbers; the assertion message carries the same line, so a verbose
suite run documents every verdict.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from mpswarm.collision import mark_agent_conflicts, mark_obstacle_conflicts
from mpswarm.config import circle_layout, load_library_spec
from mpswarm.metrics import audit_run, build_metrics
from mpswarm.occupancy import discretize_primitives
from mpswarm.paths import ArcSpec, LibraryConfig, path_count
from mpswarm.replan import (
    AgentPlan,
    Bounds,
    PlannerConfig,
    Replanner,
)
from mpswarm.sim import SimConfig, SwarmSim
from mpswarm.store import save_library, save_relations
from mpswarm.topp import ToppParams, build_library, sample_primitive
from mpswarm.world import MapSpec, generate_map

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def config_path(name: str) -> Path:
    return CONFIG_DIR / name


def _verdict(num: int, ok: bool, detail: str) -> None:
    line = f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} - {detail}"
    print(line)
    assert ok, line


# -- 1: library sizes ---------------------------------------------------------

EXPECTED_COUNTS = {
    "lib37.yaml": 37,
    "lib61.yaml": 61,
    "lib73.yaml": 73,
    "lib109.yaml": 109,
    "lib181.yaml": 181,
    "lib361.yaml": 361,
}


def test_criterion_01_library_path_counts():
    got = {}
    for name, want in EXPECTED_COUNTS.items():
        spec = load_library_spec(config_path(name))
        got[name] = path_count(spec.library)
    ok = all(got[n] == w for n, w in EXPECTED_COUNTS.items())
    detail = "path counts " + ", ".join(
        f"{n.split('.')[0]}={got[n]}" for n in EXPECTED_COUNTS
    )
    _verdict(1, ok, detail + " (expected 37/61/73/109/181/361 exactly)")


# -- 2: time parameterization vs closed form ----------------------------------


def _straight_durations(stages: int) -> tuple[float, float]:
    """(rest-to-rest, entry-speed-1) durations for a 5 m straight line."""
    cfg = LibraryConfig(
        arcs=(ArcSpec(math.inf),), length_m=5.0, rotation_step_deg=360.0
    )
    lib = build_library(
        cfg, ToppParams(v_max=1.0, a_max=3.0, speed_step=0.1, stages=stages)
    )
    by_speed = {p.start_speed: p.duration for p in lib.primitives}
    return by_speed[0.0], by_speed[1.0]


def test_criterion_02_topp_analytic_oracle():
    # closed form: accelerate at a to v, cruise, decelerate to rest
    t_rest, t_fast = 16.0 / 3.0, 31.0 / 6.0
    durations = {n: _straight_durations(n) for n in (250, 500, 1000)}
    err = {
        n: (abs(d[0] - t_rest), abs(d[1] - t_fast))
        for n, d in durations.items()
    }
    within = (
        err[1000][0] <= 0.01 * t_rest and err[1000][1] <= 0.01 * t_fast
    )
    converges = all(
        err[n][c] >= 2.0 * err[2 * n][c] for n in (250, 500) for c in (0, 1)
    )
    ok = within and converges
    _verdict(
        2,
        ok,
        f"rest-to-rest {durations[1000][0]:.5f} s (exact {t_rest:.5f}), "
        f"entry-1 {durations[1000][1]:.5f} s (exact {t_fast:.5f}); "
        f"N=1000 errors {err[1000][0]:.2e}/{err[1000][1]:.2e} (tol 1%), "
        f"halving ratios >= 2 per doubling: {converges}",
    )


# -- 3: dynamic feasibility of a full library ----------------------------------


def test_criterion_03_dynamic_feasibility_audit():
    spec = load_library_spec(config_path("lib109.yaml"))
    t0 = time.perf_counter()
    lib = build_library(spec.library, spec.params)
    v_cap = spec.params.v_max * 1.01
    a_cap = spec.params.a_max * 1.02
    worst_v, worst_a = 0.0, 0.0
    for prim in lib.primitives:
        ts = np.arange(0.0, prim.duration, 1e-3)
        _, vel, acc = sample_primitive(prim, ts)
        worst_v = max(worst_v, float(np.linalg.norm(vel, axis=1).max()))
        worst_a = max(worst_a, float(np.abs(acc).max()))
    elapsed = time.perf_counter() - t0
    ok = worst_v <= v_cap and worst_a <= a_cap and elapsed < 30.0
    _verdict(
        3,
        ok,
        f"{len(lib.primitives)} primitives at 1 ms: max speed "
        f"{worst_v:.4f} <= {v_cap} m/s, max |a| per axis "
        f"{worst_a:.4f} <= {a_cap} m/s^2, build+audit {elapsed:.1f} s < 30 s",
    )


# -- 4: obstacle-check conservativeness ----------------------------------------


def test_criterion_04_obstacle_check_conservative(lib37, rel37):
    spec = load_library_spec(config_path("lib37.yaml"))
    s_res = spec.occupancy["s_res"]
    r_infl = spec.occupancy["r_infl"]
    d1_formula = math.sqrt(3.0) / 2.0 * s_res + r_infl
    d1_ok = abs(rel37.d1 - d1_formula) < 1e-12

    table = discretize_primitives(lib37, rel37.t_res)
    tree = cKDTree(table.positions)
    n_prims = len(lib37.primitives)
    identity = np.arange(n_prims, dtype=np.int64)

    # points outside the relation grid sit farther than the grid margin
    # (>= d1 > r_infl) from every sample, so in-grid points cover all
    # possible conflicts
    rng = np.random.default_rng(4)
    lo, hi = rel37.grid.min_corner, rel37.grid.max_corner
    n_points = 40
    points = rng.uniform(lo, hi, size=(n_points, 3))

    n_pairs = n_points * n_prims
    n_conflicts = 0
    false_negatives = 0
    for p in points:
        mask = np.zeros(n_prims, dtype=bool)
        mark_obstacle_conflicts(p[None], rel37, identity, mask)
        oracle = np.unique(
            table.prim_ids[tree.query_ball_point(p, r_infl)]
        )
        n_conflicts += len(oracle)
        false_negatives += int(np.count_nonzero(~mask[oracle]))
    ok = d1_ok and n_pairs >= 10_000 and false_negatives == 0
    _verdict(
        4,
        ok,
        f"d1 {rel37.d1:.10f} matches sqrt(3)/2*s_res + r_infl; "
        f"{n_pairs} (point, primitive) trials, {n_conflicts} true conflicts "
        f"at clearance {r_infl} m, {false_negatives} false negatives",
    )


# -- 5: agent-check conservativeness -------------------------------------------


def test_criterion_05_agent_check_conservative(lib37, rel37):
    rng = np.random.default_rng(5)
    n_prims = len(lib37.primitives)
    identity = np.arange(n_prims, dtype=np.int64)
    contact = 2.0 * rel37.r_robot
    t_res = rel37.t_res

    def yaw_rot(a):
        c, s = math.cos(a), math.sin(a)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    # peer placements: mostly near-field and head-on so the oracle sees a
    # healthy count of true conflicts, plus far placements for negatives
    def peer_pose(kind, self_origin):
        if kind == "near":
            off = np.array(
                [
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-2.0, 2.0),
                    rng.uniform(-0.2, 0.2),
                ]
            )
            return yaw_rot(rng.uniform(0.0, 2.0 * math.pi)), off
        if kind == "head_on":
            theta = rng.uniform(0.0, 2.0 * math.pi)
            off = 4.0 * np.array([math.cos(theta), math.sin(theta), 0.0])
            return yaw_rot(theta + math.pi), off
        return (
            yaw_rot(rng.uniform(0.0, 2.0 * math.pi)),
            rng.uniform(-4.0, 4.0, size=3),
        )

    n_pairs = 0
    n_conflicts = 0
    false_negatives = 0
    for kind in ["near"] * 8 + ["head_on"] * 2 + ["far"] * 2:
        self_rot = yaw_rot(rng.uniform(0.0, 2.0 * math.pi))
        self_origin = rng.uniform(-1.0, 1.0, size=3)
        pid = int(rng.integers(n_prims))
        peer_prim = lib37.primitives[pid]
        peer_rot, peer_off = peer_pose(kind, self_origin)
        peer = AgentPlan(
            prim_id=pid,
            speed_index=peer_prim.speed_index,
            rotation=peer_rot,
            origin=self_origin + peer_off,
            t_start=float(rng.uniform(-0.5, 0.5)),
            duration=peer_prim.duration,
        ).as_peer(99)

        mask = np.zeros(n_prims, dtype=bool)
        mark_agent_conflicts(
            [peer], self_rot, self_origin, 0.0, 0.0, rel37, identity,
            mask, lib37,
        )

        peer_end = peer.t_start + peer_prim.duration
        for cand in lib37.primitives:
            n_pairs += 1
            # 1 ms oracle over the common active window, with the allowed
            # one-bin slack at each end
            lo = max(0.0, peer.t_start) + t_res
            hi = min(cand.duration, peer_end) - t_res
            if hi <= lo:
                continue
            ts = np.arange(lo, hi, 1e-3)
            cand_pos = (
                sample_primitive(cand, ts)[0] @ self_rot.T + self_origin
            )
            peer_pos = (
                sample_primitive(peer_prim, ts - peer.t_start)[0]
                @ peer.rotation.T
                + peer.origin
            )
            dmin = float(
                np.linalg.norm(cand_pos - peer_pos, axis=1).min()
            )
            if dmin < contact:
                n_conflicts += 1
                if not mask[cand.prim_id]:
                    false_negatives += 1
    ok = n_pairs >= 1_000 and n_conflicts > 50 and false_negatives == 0
    _verdict(
        5,
        ok,
        f"{n_pairs} peer/self pairs, {n_conflicts} true conflicts at "
        f"clearance {contact} m on the 1 ms oracle, "
        f"{false_negatives} false negatives",
    )


# -- 6: obstacle-check cost vs library size ------------------------------------


def test_criterion_06_check_time_independent_of_size(
    lib37, rel37, lib361_fast, rel361
):
    rng = np.random.default_rng(6)
    lo, hi = rel37.grid.min_corner, rel37.grid.max_corner
    cloud = rng.uniform(lo, hi, size=(2000, 3))

    def timed(lib, rel, reps=100):
        n = len(lib.primitives)
        identity = np.arange(n, dtype=np.int64)
        mask = np.zeros(n, dtype=bool)
        mark_obstacle_conflicts(cloud, rel, identity, mask)  # warm
        samples = []
        for _ in range(reps):
            mask = np.zeros(n, dtype=bool)
            t0 = time.perf_counter()
            mark_obstacle_conflicts(cloud, rel, identity, mask)
            samples.append(time.perf_counter() - t0)
        return float(np.median(samples) * 1e3)

    ms37 = timed(lib37, rel37)
    ms361 = timed(lib361_fast, rel361)
    ratio = ms361 / ms37
    ok = ratio < 2.0
    _verdict(
        6,
        ok,
        f"median obstacle check on 2000 points: 37-path {ms37:.3f} ms, "
        f"361-path {ms361:.3f} ms, ratio {ratio:.2f} < 2.0 "
        f"(absolute < 1 ms is advisory)",
    )


# -- 7: eight-agent circle exchange --------------------------------------------


def test_criterion_07_circle_swap_eight_agents(lib73, rel73):
    starts, goals = circle_layout(8, 12.0, z=1.0)
    times, dists, min_pairs, n_colliding = [], [], [], 0
    all_reached = True
    for seed in range(10):
        planner = Replanner(lib73, rel73, PlannerConfig())
        sim = SwarmSim(
            planner, starts, goals,
            config=SimConfig(timeout_s=60.0, seed=seed),
        )
        result = sim.run()
        audit = audit_run(result, r_robot=rel73.r_robot)
        all_reached &= all(a.done for a in result.agents)
        n_colliding += len(audit.colliding_pairs)
        min_pairs.append(audit.min_pair_distance_m)
        times.extend(a.reach_time for a in result.agents if a.done)
        dists.extend(audit.per_agent_distance_m)
    mean_t = float(np.mean(times)) if times else float("inf")
    mean_d = float(np.mean(dists))
    min_pair = float(np.min(min_pairs))
    ok = (
        all_reached
        and n_colliding == 0
        and mean_t <= 27.0
        and mean_d <= 25.6
        and min_pair >= 0.29
    )
    _verdict(
        7,
        ok,
        f"10 seeds x 8 agents on a 12 m circle: reached {all_reached}, "
        f"colliding pairs {n_colliding}, mean time {mean_t:.2f} s <= 27, "
        f"mean distance {mean_d:.2f} m <= 25.6, "
        f"min inter-agent {min_pair:.3f} m >= 0.29",
    )


# -- 8: cluttered single-agent crossings ----------------------------------------


def test_criterion_08_cluttered_field_success(lib181, rel181):
    spec = MapSpec(
        n_obstacles=200,
        region_lo=(-13.0, -10.0, 0.0),
        region_hi=(13.0, 10.0, 3.0),
        radius_range=(0.15, 0.45),
        clearance_m=1.5,
        surface_spacing=0.05,
    )
    planner_cfg = PlannerConfig(
        bounds=Bounds(
            lo=np.array([-19.5, -10.0, 0.3]),
            hi=np.array([19.5, 10.0, 2.7]),
        ),
        cloud_budget=400000,
    )
    successes = 0
    violations = 0
    n_seeds = 20
    for seed in range(n_seeds):
        rng = np.random.default_rng(seed)
        start = np.array([-18.0, rng.uniform(-9.0, 9.0), 1.0])
        goal = np.array([18.0, rng.uniform(-9.0, 9.0), 1.0])
        world = generate_map(
            spec, seed=seed, protected=np.vstack([start, goal])
        )
        planner = Replanner(lib181, rel181, planner_cfg)
        sim = SwarmSim(
            planner, start[None], goal[None], world=world,
            config=SimConfig(seed=seed, timeout_s=180.0),
        )
        result = sim.run()
        audit = audit_run(result, r_robot=rel181.r_robot)
        hit = bool(audit.obstacle_violation_agents)
        violations += hit
        successes += result.agents[0].done and not hit
    rate = successes / n_seeds
    ok = rate >= 0.95 and violations == 0
    _verdict(
        8,
        ok,
        f"200-cylinder 26x20x3 m field, {n_seeds} seeds: success "
        f"{successes}/{n_seeds} = {rate:.0%} >= 95%, "
        f"collision events {violations} == 0",
    )


# -- 9: fifty-agent exchange in real time ----------------------------------------


def test_criterion_09_fifty_agents_real_time(lib73, rel73):
    starts, goals = circle_layout(50, 20.0, z=1.0)
    planner = Replanner(lib73, rel73, PlannerConfig())
    sim = SwarmSim(
        planner, starts, goals, config=SimConfig(timeout_s=150.0, seed=0)
    )
    result = sim.run()
    audit = audit_run(result, r_robot=rel73.r_robot)
    reached = sum(a.done for a in result.agents)
    compute_ms = (
        np.array([s for a in result.agents for s in a.compute_s]) * 1e3
    )
    median_ms = float(np.median(compute_ms))
    real_time = result.wall_time_s < result.t_end
    ok = (
        reached == 50
        and len(audit.colliding_pairs) == 0
        and median_ms < 1.0
        and real_time
    )
    _verdict(
        9,
        ok,
        f"50 agents on a 40 m circle: reached {reached}/50, colliding "
        f"pairs {len(audit.colliding_pairs)}, median replan "
        f"{median_ms:.3f} ms < 1 ms, wall {result.wall_time_s:.1f} s < "
        f"sim {result.t_end:.1f} s",
    )


# -- 10: determinism of the full pipeline ----------------------------------------


def test_criterion_10_deterministic_metrics(lib37, rel37, tmp_path):
    from mpswarm.cli import main

    lib_path = tmp_path / "lib37.mplib"
    sha = save_library(lib_path, lib37)
    save_relations(lib_path.with_suffix(".mprel"), rel37, sha)
    scn = tmp_path / "swap.yaml"
    scn.write_text(
        "library_file: lib37.mplib\n"
        "agents:\n"
        "  starts: [[-5.0, 0.0, 1.0], [5.0, 0.0, 1.0]]\n"
        "  goals: [[5.0, 0.0, 1.0], [-5.0, 0.0, 1.0]]\n"
        "sim: {timeout_s: 45.0, seed: 0, scheduler: deterministic}\n"
    )
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["sim", str(scn), "--csv", str(a)]) == 0
    assert main(["sim", str(scn), "--csv", str(b)]) == 0
    same = a.read_bytes() == b.read_bytes()
    rows = a.read_text().splitlines()
    ok = same and len(rows) == 3
    _verdict(
        10,
        ok,
        f"two fixed-seed deterministic runs: metrics CSV byte-identical "
        f"{same} ({len(rows) - 1} agent rows)",
    )
