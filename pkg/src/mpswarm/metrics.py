"""Post-run trajectory audit and run metrics.

The audit replays each agent's motion log on a fine time grid (finer than any
grid the planner itself used) and measures pairwise separations and obstacle
clearances there, so safety numbers come from an independent reconstruction
rather than from the planner's own bookkeeping.

The per-agent CSV holds only fields that are deterministic for a fixed seed;
wall-clock timing lives in the JSON summary.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .sim import SimResult, motion_samples


def motion_log_samples(library, log, times):
    """Positions and velocities along a motion log at the given times."""
    times = np.asarray(times, dtype=float)
    begins = np.array([tb for tb, _ in log])
    seg = np.clip(np.searchsorted(begins, times, side="right") - 1, 0, None)
    pos = np.empty((times.size, 3))
    vel = np.empty((times.size, 3))
    for k in range(len(log)):
        mask = seg == k
        if mask.any():
            pos[mask], vel[mask] = motion_samples(library, log[k][1], times[mask])
    return pos, vel


@dataclass
class AuditReport:
    pair_dt: float
    obstacle_dt: float
    min_pair_distance_m: float
    per_agent_min_pair_m: np.ndarray
    colliding_pairs: list[tuple[int, int]]
    per_agent_min_obstacle_m: np.ndarray
    obstacle_violation_agents: list[int]
    per_agent_distance_m: np.ndarray
    per_agent_speed_integral_m: np.ndarray


def audit_run(
    result: SimResult,
    r_robot: float,
    pair_dt: float = 0.001,
    obstacle_dt: float = 0.01,
    chunk: int = 20000,
) -> AuditReport:
    lib = result.library
    n = len(result.agents)
    t_end = max(result.t_end, result.config.dt)

    # pairwise separation on the fine grid, chunked over time
    min_pair = np.full(n, np.inf)
    colliding: set[tuple[int, int]] = set()
    if n > 1:
        n_steps = int(math.floor(t_end / pair_dt)) + 1
        for c0 in range(0, n_steps, chunk):
            ts = (np.arange(c0, min(c0 + chunk, n_steps))) * pair_dt
            pts = np.empty((n, ts.size, 3))
            for i, agent in enumerate(result.agents):
                pts[i], _ = motion_log_samples(lib, agent.log, ts)
            for i in range(n - 1):
                diff = pts[i + 1 :] - pts[i]
                dist = np.linalg.norm(diff, axis=2)  # (n-i-1, T)
                row_min = dist.min(axis=1)
                min_pair[i] = min(min_pair[i], row_min.min())
                np.minimum(min_pair[i + 1 :], row_min, out=min_pair[i + 1 :])
                for j_off in np.nonzero(row_min < 2.0 * r_robot)[0]:
                    colliding.add((i, i + 1 + int(j_off)))

    # obstacle clearance and path length on the coarser grid
    min_obst = np.full(n, np.nan)
    violators = []
    dist_m = np.zeros(n)
    speed_int = np.zeros(n)
    n_steps = int(math.floor(t_end / obstacle_dt)) + 1
    ts = np.arange(n_steps) * obstacle_dt
    for i, agent in enumerate(result.agents):
        pos, vel = motion_log_samples(lib, agent.log, ts)
        flying = ts <= agent.reach_time if agent.done else np.ones(ts.size, bool)
        steps = np.linalg.norm(np.diff(pos[flying], axis=0), axis=1)
        dist_m[i] = float(steps.sum())
        speed = np.linalg.norm(vel[flying], axis=1)
        if speed.size > 1:
            speed_int[i] = float(np.trapezoid(speed, dx=obstacle_dt))
        if result.world is not None and result.world.surface_points.size:
            clear = result.world.surface_distance(pos)
            min_obst[i] = float(clear.min())
            if min_obst[i] < r_robot:
                violators.append(i)

    return AuditReport(
        pair_dt=pair_dt,
        obstacle_dt=obstacle_dt,
        min_pair_distance_m=float(min_pair.min()) if n > 1 else float("nan"),
        per_agent_min_pair_m=min_pair if n > 1 else np.full(n, np.nan),
        colliding_pairs=sorted(colliding),
        per_agent_min_obstacle_m=min_obst,
        obstacle_violation_agents=violators,
        per_agent_distance_m=dist_m,
        per_agent_speed_integral_m=speed_int,
    )


@dataclass
class AgentMetrics:
    agent_id: int
    reached: bool
    flight_time_s: float
    flight_distance_m: float
    replans: int
    emergencies: int
    min_obstacle_clearance_m: float
    min_peer_distance_m: float


@dataclass
class RunMetrics:
    agents: list[AgentMetrics]
    agent_compute: list[dict]  # per-agent replan timing, JSON-only
    summary: dict


def _timing_summary(seconds) -> dict:
    ms = np.asarray(seconds, dtype=float) * 1e3
    if ms.size == 0:
        return {"count": 0}
    return {
        "count": int(ms.size),
        "p50_ms": float(np.percentile(ms, 50)),
        "p90_ms": float(np.percentile(ms, 90)),
        "p99_ms": float(np.percentile(ms, 99)),
        "max_ms": float(ms.max()),
    }


def build_metrics(result: SimResult, audit: AuditReport) -> RunMetrics:
    rows = []
    for i, agent in enumerate(result.agents):
        rows.append(
            AgentMetrics(
                agent_id=agent.agent_id,
                reached=agent.done,
                flight_time_s=agent.reach_time if agent.done else float("nan"),
                flight_distance_m=float(audit.per_agent_distance_m[i]),
                replans=agent.replans,
                emergencies=agent.emergencies,
                min_obstacle_clearance_m=float(audit.per_agent_min_obstacle_m[i]),
                min_peer_distance_m=float(audit.per_agent_min_pair_m[i]),
            )
        )
    timing = _timing_summary(
        [s for a in result.agents for s in a.compute_s]
    )
    agent_compute = [_timing_summary(a.compute_s) for a in result.agents]
    reached = [r for r in rows if r.reached]
    summary = {
        "n_agents": len(rows),
        "n_reached": len(reached),
        "success_rate": len(reached) / len(rows) if rows else float("nan"),
        "mean_flight_time_s": (
            float(np.mean([r.flight_time_s for r in reached]))
            if reached
            else float("nan")
        ),
        "mean_flight_distance_m": (
            float(np.mean([r.flight_distance_m for r in reached]))
            if reached
            else float("nan")
        ),
        "total_replans": sum(r.replans for r in rows),
        "total_emergencies": sum(r.emergencies for r in rows),
        "min_pair_distance_m": audit.min_pair_distance_m,
        "colliding_pairs": len(audit.colliding_pairs),
        "obstacle_violations": len(audit.obstacle_violation_agents),
        "replan_compute": timing,
        "sim_time_s": result.t_end,
        "wall_time_s": result.wall_time_s,
    }
    return RunMetrics(agents=rows, agent_compute=agent_compute, summary=summary)


CSV_FIELDS = (
    "agent_id",
    "reached",
    "flight_time_s",
    "flight_distance_m",
    "replans",
    "emergencies",
    "min_obstacle_clearance_m",
    "min_peer_distance_m",
)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    if math.isnan(value):
        return ""
    return f"{value:.12g}"


def write_metrics_csv(path, agents: list[AgentMetrics]) -> None:
    lines = [",".join(CSV_FIELDS)]
    for row in agents:
        rec = asdict(row)
        lines.append(",".join(_fmt(rec[f]) for f in CSV_FIELDS))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_metrics_csv(path) -> list[AgentMetrics]:
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = tuple(lines[0].split(","))
    if header != CSV_FIELDS:
        raise ValueError(f"unexpected metrics header {header}")
    out = []
    for ln in lines[1:]:
        vals = ln.split(",")
        rec = dict(zip(CSV_FIELDS, vals))
        out.append(
            AgentMetrics(
                agent_id=int(rec["agent_id"]),
                reached=rec["reached"] == "1",
                flight_time_s=float(rec["flight_time_s"] or "nan"),
                flight_distance_m=float(rec["flight_distance_m"] or "nan"),
                replans=int(rec["replans"]),
                emergencies=int(rec["emergencies"]),
                min_obstacle_clearance_m=float(
                    rec["min_obstacle_clearance_m"] or "nan"
                ),
                min_peer_distance_m=float(rec["min_peer_distance_m"] or "nan"),
            )
        )
    return out


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, np.floating):
        return None if math.isnan(float(obj)) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_summary_json(path, metrics: RunMetrics) -> None:
    per_agent = []
    for row, compute in zip(metrics.agents, metrics.agent_compute):
        rec = _json_safe(asdict(row))
        rec["compute_ms"] = _json_safe(compute)
        per_agent.append(rec)
    doc = {
        "per_agent": per_agent,
        "summary": _json_safe(metrics.summary),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
