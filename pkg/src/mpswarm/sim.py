"""Decentralized multi-agent simulation over a shared primitive library.

Every agent runs the same cycle - sense, stack, maybe replan, publish, step -
against a trajectory bus that only carries published motions (no agent reads
another's internal state). An agent publishes whatever it commits to: plans,
emergency and arrival stops, the initial hover - so peers always know where
a silent agent will be. Execution is kinematic with perfect tracking: an
agent's state is a pure function of its motion log and the clock, so the
deterministic scheduler replays bit-identically and the threaded scheduler
exercises real asynchrony with the same cycle code.
"""

from __future__ import annotations

import dataclasses
import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .collision import (
    PeerStop,
    PointCloudStack,
    full_peer_raster,
    full_stop_raster,
)
from .replan import AgentPlan, AgentState, PlanOutcome, Replanner
from .topp import MotionPrimitiveLibrary, sample_primitive
from .world import ObstacleMap


@dataclass(frozen=True)
class StopMotion:
    """Straight-line maximum-deceleration stop, then rest."""

    p0: np.ndarray
    direction: np.ndarray  # unit, or zero when starting at rest
    v0: float
    t0: float
    decel: float

    @property
    def stop_time(self) -> float:
        return self.v0 / self.decel if self.v0 > 0.0 else 0.0


@dataclass(frozen=True)
class HoverMotion:
    p0: np.ndarray
    t0: float


def make_stop(state: AgentState, t0: float, decel: float) -> StopMotion:
    v = np.asarray(state.velocity, dtype=float)
    speed = float(np.linalg.norm(v))
    direction = v / speed if speed > 1e-12 else np.zeros(3)
    return StopMotion(
        p0=np.asarray(state.position, dtype=float).copy(),
        direction=direction,
        v0=speed,
        t0=t0,
        decel=decel,
    )


def motion_samples(library: MotionPrimitiveLibrary, motion, t):
    """Positions and velocities of any motion kind at times t (array or
    scalar), clamped to the motion's own validity (rest after it ends)."""
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    ts = np.atleast_1d(t)
    if isinstance(motion, AgentPlan):
        prim = library.primitives[motion.prim_id]
        pos_b, vel_b, _ = sample_primitive(prim, ts - motion.t_start)
        pos = pos_b @ motion.rotation.T + motion.origin
        vel = vel_b @ motion.rotation.T
    elif isinstance(motion, StopMotion):
        tau = np.clip(ts - motion.t0, 0.0, None)
        ts_clip = np.minimum(tau, motion.stop_time)
        dist = motion.v0 * ts_clip - 0.5 * motion.decel * ts_clip**2
        speed = np.maximum(motion.v0 - motion.decel * tau, 0.0)
        pos = motion.p0 + dist[:, None] * motion.direction
        vel = speed[:, None] * motion.direction
    elif isinstance(motion, HoverMotion):
        pos = np.broadcast_to(motion.p0, (len(ts), 3)).copy()
        vel = np.zeros((len(ts), 3))
    else:
        raise TypeError(f"unknown motion {type(motion)!r}")
    if scalar:
        return pos[0], vel[0]
    return pos, vel


_TABLE_STEP = 0.01  # motion-table sample spacing, s


class MotionTable:
    """Dense time samples of one motion for O(1) scalar state lookups.

    Scalar motion_samples queries dominate the tick loop, so each motion is
    sampled once onto a uniform grid and later lookups interpolate. The
    grid is fine enough (accelerations are bounded by the library) that the
    interpolation error is far below every clearance margin in play.
    """

    __slots__ = ("motion", "t0", "t_end", "step", "pos", "vel")

    def __init__(self, library: MotionPrimitiveLibrary, motion):
        if isinstance(motion, AgentPlan):
            t0, dur = motion.t_start, motion.duration
        elif isinstance(motion, StopMotion):
            t0, dur = motion.t0, motion.stop_time
        else:
            t0, dur = motion.t0, 0.0
        n = max(2, int(math.ceil(dur / _TABLE_STEP)) + 1)
        self.pos, self.vel = motion_samples(
            library, motion, t0 + np.linspace(0.0, dur, n)
        )
        self.motion = motion
        self.t0 = t0
        self.t_end = t0 + dur
        self.step = dur / (n - 1) if dur > 0.0 else _TABLE_STEP

    def state(self, t: float):
        """(position, velocity) at time t, resting outside the motion."""
        if t >= self.t_end:
            return self.pos[-1], self.vel[-1] * 0.0
        u = (t - self.t0) / self.step
        if u <= 0.0:
            return self.pos[0], self.vel[0]
        i = min(int(u), len(self.pos) - 2)
        w = u - i
        return (
            self.pos[i] * (1.0 - w) + self.pos[i + 1] * w,
            self.vel[i] * (1.0 - w) + self.vel[i + 1] * w,
        )


class TrajectoryBus:
    """Last-writer-wins motion board with optional delivery latency.

    Every agent keeps exactly one record on the bus: its committed plan, or
    the stop it is executing (braking, parked, hovering before the first
    plan). Peers therefore always see where a silent agent will be, plans
    and stops alike.
    """

    def __init__(
        self,
        library: MotionPrimitiveLibrary,
        latency: float = 0.0,
        t_res: float = 0.05,
    ):
        self.library = library
        self.latency = latency
        self.t_res = t_res
        # agent -> (t_pub, motion, wire record, motion table)
        self._entries: dict[int, tuple[float, object, object, MotionTable]] = {}
        self._cache_t: float | None = None
        self._cache_pos: dict[int, np.ndarray] = {}

    def publish(self, agent_id: int, motion, t_pub: float) -> None:
        """Replace the agent's record with a plan, stop, or hover.

        The wire record, its full raster, and the position table are all
        derived here, once per publish, so every later collect and every
        receiver's collision check reuses them.
        """
        wire = self._as_wire(agent_id, motion)
        if isinstance(wire, PeerStop):
            raster = full_stop_raster(wire, self.t_res)
        else:
            raster = full_peer_raster(wire, self.library, self.t_res)
        wire = dataclasses.replace(wire, raster=raster)
        table = MotionTable(self.library, motion)
        self._entries[agent_id] = (t_pub, motion, wire, table)
        self._cache_t = None

    def _position_at(self, motion, t_now: float) -> np.ndarray:
        pos, _ = motion_samples(self.library, motion, t_now)
        return pos

    @staticmethod
    def _as_wire(agent_id: int, motion):
        if isinstance(motion, AgentPlan):
            return motion.as_peer(agent_id)
        if isinstance(motion, StopMotion):
            return PeerStop(
                agent_id=agent_id,
                p0=motion.p0,
                direction=motion.direction,
                v0=motion.v0,
                t0=motion.t0,
                decel=motion.decel,
            )
        return PeerStop(
            agent_id=agent_id,
            p0=motion.p0,
            direction=np.zeros(3),
            v0=0.0,
            t0=motion.t0,
            decel=1.0,
        )

    def collect(
        self, self_id: int, self_pos: np.ndarray, t_now: float, radius: float
    ) -> list:
        """Peers (as wire records) currently within radius of self.

        Peer positions come from their published motions, not their private
        state - the only information a real receiver would have.
        """
        if self._cache_t != t_now:
            self._cache_pos = {
                aid: entry[3].state(t_now)[0]
                for aid, entry in self._entries.items()
                if entry[0] + self.latency <= t_now
            }
            self._cache_t = t_now
        out = []
        for aid, pos in self._cache_pos.items():
            if aid == self_id:
                continue
            if float(np.linalg.norm(pos - self_pos)) <= radius:
                out.append(self._entries[aid][2])
        return out


@dataclass
class SimConfig:
    dt: float = 0.01
    sensor_period: float = 0.1
    sensor_range: float = 5.0
    sensor_noise_std: float = 0.0
    timeout_s: float = 120.0
    bus_latency_s: float = 0.0
    seed: int = 0
    scheduler: str = "deterministic"  # or "threaded"


@dataclass
class AgentRuntime:
    """Mutable per-agent record: motion log, buffers, and counters."""

    agent_id: int
    start: np.ndarray
    goal: np.ndarray
    rng: np.random.Generator
    first_plan_time: float
    next_sense: float
    stack: PointCloudStack = field(default_factory=PointCloudStack)
    log: list = field(default_factory=list)  # (t_begin, motion)
    cloud: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    cloud_stale: bool = False
    last_frame: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    plan: AgentPlan | None = None
    stopping: bool = False
    arriving: bool = False
    defer_until_fresh: bool = False
    done: bool = False
    reach_time: float = float("nan")
    replans: int = 0
    emergencies: int = 0
    rescues: int = 0
    compute_s: list = field(default_factory=list)
    _tab: MotionTable | None = field(default=None, repr=False)

    def __post_init__(self):
        self.log.append((0.0, HoverMotion(p0=self.start.copy(), t0=0.0)))

    @property
    def motion(self):
        return self.log[-1][1]

    def adopt(self, t: float, motion) -> None:
        self.log.append((t, motion))

    def state_at(self, t: float, library: MotionPrimitiveLibrary) -> AgentState:
        tab = self._tab
        if tab is None or tab.motion is not self.motion:
            tab = self._tab = MotionTable(library, self.motion)
        pos, vel = tab.state(t)
        return AgentState(position=pos, velocity=vel)


@dataclass
class SimResult:
    agents: list[AgentRuntime]
    t_end: float
    wall_time_s: float
    config: SimConfig
    world: ObstacleMap | None
    library: MotionPrimitiveLibrary


class SwarmSim:
    """Shared-library swarm runner; one concurrent task per agent."""

    def __init__(
        self,
        replanner: Replanner,
        starts: np.ndarray,
        goals: np.ndarray,
        world: ObstacleMap | None = None,
        config: SimConfig | None = None,
    ):
        self.replanner = replanner
        self.library = replanner.library
        self.world = world
        self.config = config or SimConfig()
        starts = np.atleast_2d(np.asarray(starts, dtype=float))
        goals = np.atleast_2d(np.asarray(goals, dtype=float))
        if starts.shape != goals.shape:
            raise ValueError("starts and goals must pair up")
        cfg = self.config
        root = np.random.SeedSequence(cfg.seed)
        self.agents = []
        for i, seq in enumerate(root.spawn(len(starts))):
            rng = np.random.default_rng(seq)
            jitter = float(rng.uniform(0.0, cfg.sensor_period))
            self.agents.append(
                AgentRuntime(
                    agent_id=i,
                    start=starts[i].copy(),
                    goal=goals[i].copy(),
                    rng=rng,
                    first_plan_time=jitter,
                    next_sense=jitter,
                )
            )
        self.bus = TrajectoryBus(
            self.library,
            latency=cfg.bus_latency_s,
            t_res=replanner.relations.t_res,
        )
        self.peer_radius = 2.0 * self.library.length_m
        for agent in self.agents:
            self.bus.publish(agent.agent_id, agent.motion, 0.0)

    # -- one decision pass for one agent at time t ------------------------

    def _cycle(self, agent: AgentRuntime, t: float) -> None:
        cfg = self.config
        state = agent.state_at(t, self.library)
        pcfg = self.replanner.config

        dist_goal = float(np.linalg.norm(state.position - agent.goal))
        speed = float(np.linalg.norm(state.velocity))
        if dist_goal <= pcfg.r_goal and speed <= pcfg.v_goal:
            self._mark_done(agent, t, state)
            return

        # arrival braking: once the natural stopping point falls inside the
        # goal ball, coast to rest there instead of committing to another
        # full-length primitive
        if agent.arriving:
            if speed <= 1e-9:
                agent.arriving = False  # rest fell outside the ball; resume
            else:
                return
        a_max = self.library.params.a_max
        if not agent.stopping and speed > pcfg.v_goal:
            rest = state.position + state.velocity * (speed / (2.0 * a_max))
            if float(np.linalg.norm(rest - agent.goal)) <= pcfg.r_goal:
                agent.arriving = True
                agent.plan = None
                stop = make_stop(state, t, a_max)
                agent.adopt(t, stop)
                self.bus.publish(agent.agent_id, stop, t)
                return

        fresh = False
        if t + 1e-12 >= agent.next_sense:
            if self.world is not None:
                pts = self.world.sense(
                    state.position,
                    cfg.sensor_range,
                    rng=agent.rng,
                    noise_std=cfg.sensor_noise_std,
                )
            else:
                pts = np.empty((0, 3))
            agent.stack.push(pts)
            agent.last_frame = pts
            agent.cloud_stale = True
            while agent.next_sense <= t + 1e-12:
                agent.next_sense += cfg.sensor_period
            fresh = True

        peers = None
        trigger = None
        if agent.plan is None and not agent.stopping:
            if t + 1e-12 >= agent.first_plan_time:
                trigger = "init"
        elif agent.stopping:
            # nothing changes between sensor frames for a stopped agent, so
            # retrying faster than the sensor would redo identical queries
            if fresh:
                trigger = "emergency-retry"
        else:
            due = t - agent.plan.t_start >= self.replanner.replan_threshold(
                agent.plan
            )
            if due and not self._plan_ends_at_goal(agent):
                # a deferred timed replan waits for new sensor data; the
                # world it just failed against has not changed until then
                if fresh or not agent.defer_until_fresh:
                    trigger = "time"
            elif fresh:
                peers = self.bus.collect(
                    agent.agent_id, state.position, t, self.peer_radius
                )
                # only the newest frame needs the obstacle recheck: every
                # older frame was already validated against this same plan,
                # at adoption or at a previous sensor tick
                need, why = self.replanner.should_replan(
                    agent.plan, t, agent.last_frame, peers
                )
                if need:
                    trigger = why
        if trigger is None:
            return

        if peers is None:
            peers = self.bus.collect(
                agent.agent_id, state.position, t, self.peer_radius
            )
        if agent.cloud_stale:
            agent.cloud = self.replanner.sample_stack(agent.stack, agent.rng)
            agent.cloud_stale = False
        result = self.replanner.replan(state, agent.goal, agent.cloud, peers, t)
        agent.compute_s.append(result.compute_s)

        if result.outcome is PlanOutcome.PLANNED:
            self._adopt_plan(agent, result, t)
        elif result.outcome is PlanOutcome.EMERGENCY_STOP:
            rescue = None
            flagged = result.n_obstacle_flagged + result.n_agent_flagged
            if speed <= 1e-9 and flagged > 0:
                # parked and walled in by the conservative index: certify
                # candidates against raw points and parked peers before
                # giving up
                rescue = self.replanner.rescue_replan(
                    state, agent.goal, agent.cloud, peers, t
                )
                agent.compute_s.append(rescue.compute_s)
            if rescue is not None and rescue.outcome is PlanOutcome.PLANNED:
                agent.rescues += 1
                self._adopt_plan(agent, rescue, t)
            elif (
                trigger == "time"
                and agent.plan is not None
                and not self.replanner.plan_conflicted(
                    agent.plan, t, agent.last_frame, peers
                )
            ):
                # the executing plan is still certified; fly it out and
                # retry on fresh data instead of braking into the pad
                agent.defer_until_fresh = True
            elif not agent.stopping:
                agent.emergencies += 1
                agent.stopping = True
                agent.plan = None
                stop = make_stop(state, t, self.library.params.a_max)
                agent.adopt(t, stop)
                self.bus.publish(agent.agent_id, stop, t)
            # stopped agents retry on every fresh sensor frame
        else:  # GOAL_REACHED
            self._mark_done(agent, t, state)

    def _adopt_plan(self, agent: AgentRuntime, result, t: float) -> None:
        agent.plan = result.plan
        agent.stopping = False
        agent.defer_until_fresh = False
        agent.replans += 1
        agent.adopt(t, result.plan)
        self.bus.publish(agent.agent_id, result.plan, t)

    def _plan_ends_at_goal(self, agent: AgentRuntime) -> bool:
        """True when the executing plan already terminates (at rest) inside
        the goal ball, so a timed replan would only push the agent past it."""
        plan = agent.plan
        prim = self.library.primitives[plan.prim_id]
        end_w = plan.rotation @ prim.end_point + plan.origin
        return float(np.linalg.norm(end_w - agent.goal)) <= self.replanner.config.r_goal

    def _mark_done(self, agent: AgentRuntime, t: float, state: AgentState):
        agent.done = True
        agent.reach_time = t
        agent.plan = None
        stop = make_stop(state, t, self.library.params.a_max)
        agent.adopt(t, stop)
        self.bus.publish(agent.agent_id, stop, t)

    # -- schedulers --------------------------------------------------------

    def run(self) -> SimResult:
        if self.config.scheduler == "deterministic":
            return self._run_deterministic()
        if self.config.scheduler == "threaded":
            return self._run_threaded()
        raise ValueError(f"unknown scheduler {self.config.scheduler!r}")

    def _run_deterministic(self) -> SimResult:
        cfg = self.config
        wall0 = time.perf_counter()
        n_ticks = int(round(cfg.timeout_s / cfg.dt))
        t = 0.0
        for tick in range(n_ticks + 1):
            t = tick * cfg.dt
            if all(a.done for a in self.agents):
                break
            for agent in self.agents:
                if not agent.done:
                    self._cycle(agent, t)
        return SimResult(
            agents=self.agents,
            t_end=t,
            wall_time_s=time.perf_counter() - wall0,
            config=cfg,
            world=self.world,
            library=self.library,
        )

    def _run_threaded(self) -> SimResult:
        cfg = self.config
        lock = threading.Lock()
        stop = threading.Event()
        wall0 = time.perf_counter()

        def loop(agent: AgentRuntime):
            while not stop.is_set():
                t = time.perf_counter() - wall0
                if t >= cfg.timeout_s:
                    break
                with lock:
                    if agent.done:
                        break
                    self._cycle(agent, t)
                    if all(a.done for a in self.agents):
                        stop.set()
                time.sleep(cfg.dt)

        threads = [
            threading.Thread(target=loop, args=(a,), daemon=True)
            for a in self.agents
        ]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        t_end = min(time.perf_counter() - wall0, cfg.timeout_s)
        return SimResult(
            agents=self.agents,
            t_end=t_end,
            wall_time_s=time.perf_counter() - wall0,
            config=cfg,
            world=self.world,
            library=self.library,
        )
