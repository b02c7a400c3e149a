"""Per-agent receding-horizon replanning over the shared primitive library.

Each cycle the agent builds a body frame from its velocity (+x forward),
snaps its speed onto the library's start-speed grid, flags unsafe primitives
via the precomputed relations, and picks the cheapest safe one: progress
toward the goal plus a penalty for ending outside the flight bounds. No safe
primitive means an emergency stop along the current velocity.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .collision import (
    PeerStop,
    PeerTrajectory,
    mark_agent_conflicts,
    mark_obstacle_conflicts,
    sample_cloud,
)
from .occupancy import OccupancyRelations
from .topp import MotionPrimitiveLibrary, sample_primitive

_GRAVITY_DIR = np.array([0.0, 0.0, -1.0])
_PARALLEL_COS = math.cos(math.radians(1.0))  # within 1 deg of +-gravity


def velocity_frame(
    velocity: np.ndarray, fallback_dir: np.ndarray, eps_v: float = 0.05
) -> np.ndarray:
    """Rotation matrix (columns x, y, z) of the velocity-aligned body frame.

    x follows the velocity when its norm is at least eps_v and it is not
    within a degree of vertical, otherwise fallback_dir (which must not be
    near-vertical itself); y = normalize(x cross g), z = x cross y, with g
    the unit gravity direction. Right-handed and orthonormal by
    construction.
    """
    v = np.asarray(velocity, dtype=float)
    fb = np.asarray(fallback_dir, dtype=float)
    nfb = np.linalg.norm(fb)
    if nfb == 0.0 or abs(fb @ _GRAVITY_DIR) / nfb >= _PARALLEL_COS:
        raise ValueError("fallback direction must not be parallel to gravity")
    nv = np.linalg.norm(v)
    if nv >= eps_v and abs(v @ _GRAVITY_DIR) / nv < _PARALLEL_COS:
        x = v / nv
    else:
        x = fb / nfb
    y = np.cross(x, _GRAVITY_DIR)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=1)


def select_start_speed(speed: float, v_max: float, speed_step: float) -> int:
    """Index of the library start speed nearest to min(speed, v_max).

    Exact midpoints round toward the lower index.
    """
    ratio = min(float(speed), v_max) / speed_step
    idx = int(math.ceil(ratio - 0.5))
    return min(max(idx, 0), int(round(v_max / speed_step)))


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned flight volume."""

    lo: np.ndarray
    hi: np.ndarray

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)


@dataclass
class PlannerConfig:
    lambda_goal: float = 1.0
    lambda_bound: float = 1.0
    bound_cost: float = 1.0e4
    bounds: Bounds | None = None
    r_goal: float = 0.3
    v_goal: float = 0.1
    eps_v: float = 0.05
    t_replan_max: float = 1.0
    t_replan_frac: float = 0.8
    cloud_budget: int = 2000
    #: extra clearance required by the exact rescue check, on top of
    #: r_robot; must cover the obstacle surface sampling gap plus the
    #: primitive sample spacing (v_max * t_res / 2)
    rescue_pad: float = 0.05


def score_primitives(
    end_points_body: np.ndarray,
    rotation: np.ndarray,
    origin: np.ndarray,
    goal: np.ndarray,
    config: PlannerConfig,
) -> np.ndarray:
    """Cost of each candidate: goal-distance change plus bounds penalty."""
    end_w = end_points_body @ rotation.T + origin
    d_end = np.linalg.norm(end_w - goal, axis=1)
    d_start = float(np.linalg.norm(origin - goal))
    cost = config.lambda_goal * (d_end - d_start)
    if config.bounds is not None:
        outside = ~config.bounds.contains(end_w)
        cost = cost + config.lambda_bound * config.bound_cost * outside
    return cost


class PlanOutcome(Enum):
    PLANNED = "planned"
    EMERGENCY_STOP = "emergency_stop"
    GOAL_REACHED = "goal_reached"


@dataclass(frozen=True)
class AgentPlan:
    """A committed primitive execution: frame, timing, and identity."""

    prim_id: int
    speed_index: int
    rotation: np.ndarray  # (3,3) body->world
    origin: np.ndarray  # (3,)
    t_start: float
    duration: float

    def as_peer(self, agent_id: int) -> PeerTrajectory:
        return PeerTrajectory(
            agent_id=agent_id,
            t_start=self.t_start,
            rotation=self.rotation,
            origin=self.origin,
            prim_id=self.prim_id,
            speed_index=self.speed_index,
        )


@dataclass(frozen=True)
class PlanResult:
    outcome: PlanOutcome
    plan: AgentPlan | None = None
    n_candidates: int = 0
    n_obstacle_flagged: int = 0
    n_agent_flagged: int = 0
    cost: float = float("nan")
    compute_s: float = 0.0

    @property
    def n_unsafe(self) -> int:
        return self.n_obstacle_flagged + self.n_agent_flagged


@dataclass(frozen=True)
class AgentState:
    position: np.ndarray
    velocity: np.ndarray


def _safe_fallback(direction: np.ndarray) -> np.ndarray:
    """Nudge a near-vertical goal direction into the horizontal plane."""
    d = np.asarray(direction, dtype=float)
    n = np.linalg.norm(d)
    if n > 0.0 and abs(d[2]) / n < _PARALLEL_COS:
        return d / n
    horiz = np.array([d[0], d[1], 0.0])
    nh = np.linalg.norm(horiz)
    if nh > 1e-12:
        return horiz / nh
    return np.array([1.0, 0.0, 0.0])


def _yaw_spin(direction: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rotate a vector about the world vertical by angle_rad."""
    c, s = math.cos(angle_rad), math.sin(angle_rad)
    x, y, z = direction
    return np.array([c * x - s * y, s * x + c * y, z])


class Replanner:
    """Binds a primitive library and its relations to the planning policy."""

    def __init__(
        self,
        library: MotionPrimitiveLibrary,
        relations: OccupancyRelations,
        config: PlannerConfig | None = None,
    ):
        if relations.n_prims != len(library.primitives):
            raise ValueError("relations were built for a different library")
        self.library = library
        self.relations = relations
        self.config = config or PlannerConfig()
        self._end_pts = np.stack([p.end_point for p in library.primitives])
        self._group_end_pts = [
            self._end_pts[ids] for ids in library.group_ids
        ]
        # single-primitive mapping reused by should_replan
        self._one = np.full(len(library.primitives), -1, dtype=np.int64)
        # body-frame samples of every primitive at the relation time step,
        # concatenated per group: the exact-certification paths scan them
        step = relations.t_res
        self._group_samples = []
        self._group_sample_bounds = []
        for ids in library.group_ids:
            chunks = []
            bounds = np.empty(len(ids) + 1, dtype=np.int64)
            bounds[0] = 0
            for k, gid in enumerate(ids):
                prim = library.primitives[gid]
                n = max(2, int(math.ceil(prim.duration / step)) + 1)
                pos_b, _, _ = sample_primitive(prim, np.linspace(0.0, prim.duration, n))
                chunks.append(pos_b)
                bounds[k + 1] = bounds[k] + n
            self._group_samples.append(
                np.concatenate(chunks) if chunks else np.empty((0, 3))
            )
            self._group_sample_bounds.append(bounds)
        # Candidate headings for a rest start. The paths fan out as a
        # forward cone around body +x, so when the frame pointing at the
        # goal is fully blocked the scan retries with the frame yawed on
        # the library's own angular grid, nearest deviation first. Moving
        # starts never yaw: there the frame is pinned to the velocity.
        step_deg = library.config.rotation_step_deg if library.config else 30.0
        n_steps = max(1, int(round(360.0 / step_deg)))
        yaws = []
        for k in range(n_steps):
            a = k * math.radians(step_deg)
            if a > math.pi + 1e-12:
                a -= 2.0 * math.pi
            yaws.append(a)
        yaws.sort(key=lambda a: (abs(a), a < 0.0))
        self._rest_yaws = yaws

    def _split_peers(self, peers, t_now: float):
        """Partition peer records into rest points of motions that have
        provably ended by t_now (a parked robot holds its point until it
        publishes otherwise) and still-active records."""
        parked, moving = [], []
        n_prims = len(self.library.primitives)
        for peer in peers or []:
            if isinstance(peer, PeerStop):
                if t_now >= peer.t0 + peer.stop_time:
                    parked.append(peer.rest_point)
                else:
                    moving.append(peer)
                continue
            if 0 <= peer.prim_id < n_prims:
                prim = self.library.primitives[peer.prim_id]
                if (
                    prim.speed_index == peer.speed_index
                    and t_now >= peer.t_start + prim.duration
                ):
                    parked.append(peer.rotation @ prim.end_point + peer.origin)
                    continue
            moving.append(peer)
        return parked, moving

    def sample_stack(self, stack, rng: np.random.Generator) -> np.ndarray:
        """Budgeted uniform subsample of the sensor stack union."""
        return sample_cloud(stack.merged(), self.config.cloud_budget, rng)

    def replan(
        self,
        state: AgentState,
        goal: np.ndarray,
        cloud_w: np.ndarray,
        peers,
        t_now: float,
    ) -> PlanResult:
        tic = time.perf_counter()
        cfg = self.config
        p = np.asarray(state.position, dtype=float)
        v = np.asarray(state.velocity, dtype=float)
        goal = np.asarray(goal, dtype=float)

        speed = float(np.linalg.norm(v))
        if float(np.linalg.norm(p - goal)) <= cfg.r_goal and speed <= cfg.v_goal:
            return PlanResult(PlanOutcome.GOAL_REACHED)

        fallback = _safe_fallback(goal - p)
        params = self.library.params
        g_idx = select_start_speed(speed, params.v_max, params.speed_step)
        group = self.library.group_ids[g_idx]
        if len(group) == 0:
            return PlanResult(PlanOutcome.EMERGENCY_STOP)
        local = self.library.local_of_global[g_idx]
        cloud_w = np.asarray(cloud_w, dtype=float).reshape(-1, 3)

        # at rest the frame heading is a free choice; scan outward from the
        # goal-facing one (flag counts reported are the goal-facing frame's)
        yaws = self._rest_yaws if speed < cfg.eps_v else (0.0,)
        first_obst = first_agent = 0
        for ang in yaws:
            rot = velocity_frame(v, _yaw_spin(fallback, ang), cfg.eps_v)
            mask = np.zeros(len(group), dtype=bool)
            n_obst = 0
            n_agent = 0
            if len(cloud_w):
                cloud_v = (cloud_w - p) @ rot
                n_obst = mark_obstacle_conflicts(
                    cloud_v, self.relations, local, mask
                )
            if peers:
                n_agent = mark_agent_conflicts(
                    peers, rot, p, t_now, t_now, self.relations, local, mask,
                    self.library,
                )
            if ang == 0.0:
                first_obst, first_agent = n_obst, n_agent
            if n_obst + n_agent < len(group):
                break
        else:
            return PlanResult(
                PlanOutcome.EMERGENCY_STOP,
                n_candidates=len(group),
                n_obstacle_flagged=first_obst,
                n_agent_flagged=first_agent,
                compute_s=time.perf_counter() - tic,
            )
        cost = score_primitives(self._group_end_pts[g_idx], rot, p, goal, cfg)
        cost = np.where(mask, np.inf, cost)
        best_local = int(np.argmin(cost))  # ties resolve to the lowest id
        prim_id = int(group[best_local])
        plan = AgentPlan(
            prim_id=prim_id,
            speed_index=g_idx,
            rotation=rot,
            origin=p.copy(),
            t_start=float(t_now),
            duration=self.library.primitives[prim_id].duration,
        )
        return PlanResult(
            PlanOutcome.PLANNED,
            plan=plan,
            n_candidates=len(group),
            n_obstacle_flagged=n_obst,
            n_agent_flagged=n_agent,
            cost=float(cost[best_local]),
            compute_s=time.perf_counter() - tic,
        )

    def rescue_replan(
        self,
        state: AgentState,
        goal: np.ndarray,
        cloud_w: np.ndarray,
        peers,
        t_now: float,
    ) -> PlanResult:
        """Exact-geometry fallback for a rest state the index has walled in.

        The relation index pads every query by the cell and surface
        quantization, so an agent parked closer to an obstacle - or to
        another parked robot - than that padding sees every candidate
        flagged even though many are truly clear. At rest the body frame is
        exact, so candidates can instead be certified directly: sample each
        primitive along time, measure the distance from those samples to the
        sensed points (clearance above r_robot + rescue_pad) and to the rest
        points of peers that have finished braking (clearance above
        2 r_robot + rescue_pad; a parked peer holds its point until it
        publishes otherwise, so no time gating applies). Peers still moving
        keep the indexed (conservative) check. The certificate is only as
        strong as the cloud, so keep the cloud budget at or above the stack
        size where this path matters.

        The candidate paths fan forward from body +x, so a frame aimed at
        the goal cannot propose flying around - or away from - a blockage
        sitting in the goal direction. Like replan, a rest start retries
        the whole certification with the frame yawed on the library's
        angular grid, nearest deviation first, and commits to the first
        frame that certifies any candidate.
        """
        tic = time.perf_counter()
        cfg = self.config
        p = np.asarray(state.position, dtype=float)
        v = np.asarray(state.velocity, dtype=float)
        goal = np.asarray(goal, dtype=float)

        speed = float(np.linalg.norm(v))
        fallback = _safe_fallback(goal - p)
        params = self.library.params
        g_idx = select_start_speed(speed, params.v_max, params.speed_step)
        group = self.library.group_ids[g_idx]
        if len(group) == 0:
            return PlanResult(PlanOutcome.EMERGENCY_STOP)
        local = self.library.local_of_global[g_idx]

        parked_pts, moving = self._split_peers(peers, t_now)
        parked = np.asarray(parked_pts, dtype=float).reshape(-1, 3)
        cloud_w = np.asarray(cloud_w, dtype=float).reshape(-1, 3)
        tree = cKDTree(cloud_w) if len(cloud_w) else None

        yaws = self._rest_yaws if speed < cfg.eps_v else (0.0,)
        first_obst = first_agent = 0
        for ang in yaws:
            rot = velocity_frame(v, _yaw_spin(fallback, ang), cfg.eps_v)
            mask = np.zeros(len(group), dtype=bool)
            n_agent = 0
            if moving:
                n_agent = mark_agent_conflicts(
                    moving, rot, p, t_now, t_now, self.relations, local, mask,
                    self.library,
                )
            n_obst = 0
            if tree is not None or len(parked):
                samples_w = self._group_samples[g_idx] @ rot.T + p
                bounds = self._group_sample_bounds[g_idx]
                if tree is not None:
                    thresh = self.relations.r_robot + cfg.rescue_pad
                    dist, _ = tree.query(samples_w)
                    per_prim = np.minimum.reduceat(dist, bounds[:-1])
                    hit = (per_prim < thresh) & ~mask
                    n_obst = int(hit.sum())
                    mask |= hit
                if len(parked):
                    peer_thresh = 2.0 * self.relations.r_robot + cfg.rescue_pad
                    gap = np.linalg.norm(
                        samples_w[:, None, :] - parked[None, :, :], axis=2
                    ).min(axis=1)
                    per_prim = np.minimum.reduceat(gap, bounds[:-1])
                    hit = (per_prim < peer_thresh) & ~mask
                    n_agent += int(hit.sum())
                    mask |= hit
            if ang == 0.0:
                first_obst, first_agent = n_obst, n_agent
            if n_obst + n_agent < len(group):
                break
        else:
            return PlanResult(
                PlanOutcome.EMERGENCY_STOP,
                n_candidates=len(group),
                n_obstacle_flagged=first_obst,
                n_agent_flagged=first_agent,
                compute_s=time.perf_counter() - tic,
            )
        cost = score_primitives(self._group_end_pts[g_idx], rot, p, goal, cfg)
        cost = np.where(mask, np.inf, cost)
        best_local = int(np.argmin(cost))
        prim_id = int(group[best_local])
        plan = AgentPlan(
            prim_id=prim_id,
            speed_index=g_idx,
            rotation=rot,
            origin=p.copy(),
            t_start=float(t_now),
            duration=self.library.primitives[prim_id].duration,
        )
        return PlanResult(
            PlanOutcome.PLANNED,
            plan=plan,
            n_candidates=len(group),
            n_obstacle_flagged=n_obst,
            n_agent_flagged=n_agent,
            cost=float(cost[best_local]),
            compute_s=time.perf_counter() - tic,
        )

    def score_scan(
        self,
        state: AgentState,
        goal: np.ndarray,
        cloud_w: np.ndarray,
        peers,
        t_now: float,
    ):
        """Diagnostic pass: (prim_ids, costs, flagged) for the active speed
        group, without selecting anything."""
        cfg = self.config
        p = np.asarray(state.position, dtype=float)
        v = np.asarray(state.velocity, dtype=float)
        goal = np.asarray(goal, dtype=float)
        rot = velocity_frame(v, _safe_fallback(goal - p), cfg.eps_v)
        params = self.library.params
        g_idx = select_start_speed(
            float(np.linalg.norm(v)), params.v_max, params.speed_step
        )
        group = self.library.group_ids[g_idx]
        local = self.library.local_of_global[g_idx]
        mask = np.zeros(len(group), dtype=bool)
        cloud_w = np.asarray(cloud_w, dtype=float).reshape(-1, 3)
        if len(cloud_w):
            mark_obstacle_conflicts(
                (cloud_w - p) @ rot, self.relations, local, mask
            )
        if peers:
            mark_agent_conflicts(
                peers, rot, p, t_now, t_now, self.relations, local, mask,
                self.library,
            )
        cost = score_primitives(self._group_end_pts[g_idx], rot, p, goal, cfg)
        return group.copy(), cost, mask

    def replan_threshold(self, plan: AgentPlan) -> float:
        cfg = self.config
        return min(cfg.t_replan_max, cfg.t_replan_frac * plan.duration)

    def plan_conflicted(
        self, plan: AgentPlan, t_now: float, cloud_w: np.ndarray, peers
    ) -> str:
        """Re-validate only the executing primitive against fresh obstacle
        points and peer records, in the plan's own frame and start time
        (past portions of the plan cannot overlap future peer bins, so they
        drop out naturally). Parked peers are checked exactly, at the same
        contact distance the rescue path certifies against - otherwise a
        rescue-certified escape would be re-flagged by the index it was
        rescued from and the agent would brake straight back into the
        cluster. Returns which input flagged it ('obstacle' or 'peer'), or
        '' when the plan still validates.
        """
        self._one[:] = -1
        self._one[plan.prim_id] = 0
        mask = np.zeros(1, dtype=bool)
        cloud_w = np.asarray(cloud_w, dtype=float).reshape(-1, 3)
        if len(cloud_w):
            cloud_v = (cloud_w - plan.origin) @ plan.rotation
            mark_obstacle_conflicts(cloud_v, self.relations, self._one, mask)
            if mask[0]:
                return "obstacle"
        parked_pts, moving = self._split_peers(peers, t_now)
        if moving:
            mark_agent_conflicts(
                moving,
                plan.rotation,
                plan.origin,
                plan.t_start,
                t_now,
                self.relations,
                self._one,
                mask,
                self.library,
            )
            if mask[0]:
                return "peer"
        if parked_pts:
            parked = np.asarray(parked_pts, dtype=float).reshape(-1, 3)
            prim = self.library.primitives[plan.prim_id]
            lo = min(max(t_now - plan.t_start, 0.0), prim.duration)
            n = max(2, int(math.ceil((prim.duration - lo) / self.relations.t_res)) + 1)
            ts = np.linspace(lo, prim.duration, n)
            pos_b, _, _ = sample_primitive(prim, ts)
            pos_w = pos_b @ plan.rotation.T + plan.origin
            gap = np.linalg.norm(pos_w[:, None, :] - parked[None, :, :], axis=2)
            if float(gap.min()) < 2.0 * self.relations.r_robot + self.config.rescue_pad:
                return "peer"
        return ""

    def should_replan(
        self, plan: AgentPlan, t_now: float, cloud_w: np.ndarray, peers
    ) -> tuple[bool, str]:
        """Time-based or collision-based trigger for abandoning a plan
        early."""
        if t_now - plan.t_start >= self.replan_threshold(plan):
            return True, "time"
        why = self.plan_conflicted(plan, t_now, cloud_w, peers)
        return (why != "", why)
