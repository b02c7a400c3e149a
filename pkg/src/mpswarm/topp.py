"""Time-optimal parameterization of geometric paths along arc length.

Each path q(s), s in [0, l], is reparameterized by solving for the squared
speed profile x_i = s_dot(s_i)^2 on a uniform grid. With u = s_ddot the
second-order dynamics become linear per stage:

    x_{i+1} = x_i + 2 * delta_i * u_i

and the velocity/acceleration limits become linear rows

    a * u + b * x + c <= 0

per stage (one row caps q'.q' * x at v_max^2; six rows cap each axis of
q''(s) x + q'(s) u at +-a_max). A backward pass computes the controllable
interval [x_lo_i, x_hi_i] that still admits reaching the terminal speed, a
greedy forward pass then maximizes u stage by stage, and segment times follow
in closed form from the piecewise-constant-u model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .lp import _interval_1d, _seidel_2d
from .paths import GeometricPath, LibraryConfig, build_path_library

logger = logging.getLogger(__name__)

_X_FLOOR = 1e-12  # squared speeds below this are snapped to rest


@dataclass(frozen=True)
class ToppParams:
    """Kinodynamic limits and discretization of the parameterization."""

    v_max: float = 1.0
    a_max: float = 3.0
    speed_step: float = 0.1
    stages: int = 1000

    def __post_init__(self):
        if self.v_max <= 0 or self.a_max <= 0 or self.speed_step <= 0:
            raise ValueError("v_max, a_max and speed_step must be positive")
        if self.stages < 2:
            raise ValueError("need at least 2 stages")
        ratio = self.v_max / self.speed_step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("v_max must be a multiple of speed_step")

    @property
    def start_speeds(self) -> np.ndarray:
        n = int(round(self.v_max / self.speed_step)) + 1
        return np.arange(n) * self.speed_step


@dataclass(frozen=True)
class StageConstraints:
    """Per-stage linear rows (a, b, c): a*u + b*x + c <= 0.

    rows has shape (n_stages + 1, 7, 3): one velocity row and six signed
    acceleration rows per grid position.
    """

    s_grid: np.ndarray
    rows: np.ndarray


def build_stage_constraints(
    path: GeometricPath, params: ToppParams, n_stages: int | None = None
) -> StageConstraints:
    """Assemble the LP rows of every stage on a uniform arc-length grid."""
    n = params.stages if n_stages is None else int(n_stages)
    s = np.linspace(0.0, path.length_m, n + 1)
    q1 = path.evaluate(s, 1)
    q2 = path.evaluate(s, 2)
    rows = np.empty((n + 1, 7, 3))
    rows[:, 0, 0] = 0.0
    rows[:, 0, 1] = np.einsum("ij,ij->i", q1, q1)
    rows[:, 0, 2] = -params.v_max**2
    for ax in range(3):
        rows[:, 1 + 2 * ax, 0] = q1[:, ax]
        rows[:, 1 + 2 * ax, 1] = q2[:, ax]
        rows[:, 1 + 2 * ax, 2] = -params.a_max
        rows[:, 2 + 2 * ax, 0] = -q1[:, ax]
        rows[:, 2 + 2 * ax, 1] = -q2[:, ax]
        rows[:, 2 + 2 * ax, 2] = -params.a_max
    return StageConstraints(s_grid=s, rows=rows)


@njit(cache=True)
def _backward_kernel(rows, delta, x_end):  # pragma: no cover - via wrapper
    n = delta.shape[0]
    lo = np.zeros(n + 1)
    hi = np.zeros(n + 1)
    lo[n] = x_end
    hi[n] = x_end
    A = np.empty((10, 2))
    b = np.empty(10)
    for i in range(n - 1, -1, -1):
        m = 0
        for j in range(rows.shape[1]):
            # LP variables z = (x, u)
            A[m, 0] = rows[i, j, 1]
            A[m, 1] = rows[i, j, 0]
            b[m] = -rows[i, j, 2]
            m += 1
        d2 = 2.0 * delta[i]
        A[m, 0] = 1.0
        A[m, 1] = d2
        b[m] = hi[i + 1]
        m += 1
        A[m, 0] = -1.0
        A[m, 1] = -d2
        b[m] = -lo[i + 1]
        m += 1
        A[m, 0] = -1.0
        A[m, 1] = 0.0
        b[m] = 0.0  # x >= 0
        m += 1
        st1, xh, _u1 = _seidel_2d(1.0, 0.0, A[:m], b[:m], 2 * i)
        if st1 != 0:
            return i, lo, hi
        st2, xl, _u2 = _seidel_2d(-1.0, 0.0, A[:m], b[:m], 2 * i + 1)
        if st2 != 0:
            return i, lo, hi
        if xl < 0.0:
            xl = 0.0
        if xh < xl:
            if xh < xl - 1e-9 * (xl + 1.0):
                return i, lo, hi
            xh = xl
        lo[i] = xl
        hi[i] = xh
    return -1, lo, hi


@njit(cache=True)
def _forward_kernel(rows, delta, lo, hi, x_start):  # pragma: no cover
    n = delta.shape[0]
    x = np.zeros(n + 1)
    u = np.zeros(n)
    tol = 1e-9 * (x_start + 1.0)
    if x_start < lo[0] - tol or x_start > hi[0] + tol:
        return 0, x, u
    xi = min(max(x_start, lo[0]), hi[0])
    x[0] = xi
    a = np.empty(9)
    b = np.empty(9)
    for i in range(n):
        m = 0
        for j in range(rows.shape[1]):
            a[m] = rows[i, j, 0]
            b[m] = -rows[i, j, 2] - rows[i, j, 1] * xi
            m += 1
        d2 = 2.0 * delta[i]
        a[m] = d2
        b[m] = hi[i + 1] - xi
        m += 1
        a[m] = -d2
        b[m] = xi - lo[i + 1]
        m += 1
        st, _ulo, uhi = _interval_1d(a[:m], b[:m])
        if st != 0:
            return i, x, u
        xn = xi + d2 * uhi
        # clamp float drift back into the controllable interval
        if xn > hi[i + 1]:
            xn = hi[i + 1]
        if xn < lo[i + 1]:
            xn = lo[i + 1]
        if xn < _X_FLOOR:
            if xn < -1e-9:
                return i, x, u
            xn = 0.0
        u[i] = (xn - xi) / d2
        x[i + 1] = xn
        xi = xn
    return -1, x, u


@dataclass(frozen=True)
class ControllableSets:
    """Backward-pass result: per-stage interval of reachable squared speeds."""

    lo: np.ndarray
    hi: np.ndarray
    feasible: bool
    failed_stage: int = -1


def backward_pass(
    constraints: StageConstraints, s_dot_end: float = 0.0
) -> ControllableSets:
    """Propagate the terminal squared speed backwards through every stage LP."""
    delta = np.diff(constraints.s_grid)
    st, lo, hi = _backward_kernel(constraints.rows, delta, float(s_dot_end) ** 2)
    return ControllableSets(lo=lo, hi=hi, feasible=(st < 0), failed_stage=int(st))


def forward_pass(
    constraints: StageConstraints, sets: ControllableSets, s_dot_start: float
):
    """Greedy maximum-acceleration profile through the controllable sets.

    Returns (feasible, x, u). Infeasible means the start speed lies outside
    the stage-0 controllable interval (or a stage LP emptied, which cannot
    happen for consistent inputs).
    """
    if not sets.feasible:
        return False, None, None
    delta = np.diff(constraints.s_grid)
    st, x, u = _forward_kernel(
        constraints.rows, delta, sets.lo, sets.hi, float(s_dot_start) ** 2
    )
    if st >= 0:
        return False, None, None
    return True, x, u


def time_allocation(s_grid: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Segment times of the piecewise-constant-u profile.

    t_{i+1} = t_i + delta_i / ((sqrt(x_i) + sqrt(x_{i+1})) / 2), which is the
    exact traversal time of a segment with linearly varying squared speed.
    """
    x = np.where(np.abs(x) < _X_FLOOR, 0.0, x)
    if np.any(x < 0.0):
        raise ValueError("negative squared speed")
    sd = np.sqrt(x)
    avg = 0.5 * (sd[:-1] + sd[1:])
    if np.any(avg <= 0.0):
        raise ValueError("segment with zero speed at both ends is untraversable")
    t = np.empty_like(x)
    t[0] = 0.0
    np.cumsum(np.diff(s_grid) / avg, out=t[1:])
    return t


@dataclass(frozen=True)
class MotionPrimitive:
    """One time-parameterized path: trajectory of the body-frame origin."""

    prim_id: int
    path: GeometricPath
    speed_index: int
    start_speed: float
    t_grid: np.ndarray
    x: np.ndarray
    u: np.ndarray

    @property
    def duration(self) -> float:
        return float(self.t_grid[-1])

    @property
    def path_index(self) -> int:
        return self.path.index

    @property
    def end_point(self) -> np.ndarray:
        return self.path.end_point()


def sample_primitive(prim: MotionPrimitive, t):
    """Sample position/velocity/acceleration at times t (clamped to [0, T]).

    Returns three arrays shaped like t + (3,). Beyond the end the primitive
    is at rest at its end point; before 0 it is at the start state.
    """
    t = np.asarray(t, dtype=float)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    tg = prim.t_grid
    n = len(tg) - 1
    length = prim.path.length_m
    s_step = length / n

    tc = np.clip(t, 0.0, tg[-1])
    seg = np.clip(np.searchsorted(tg, tc, side="right") - 1, 0, n - 1)
    tau = tc - tg[seg]
    sd0 = np.sqrt(prim.x[seg])
    useg = prim.u[seg]
    s = seg * s_step + sd0 * tau + 0.5 * useg * tau * tau
    s = np.clip(s, 0.0, length)
    sd = np.maximum(sd0 + useg * tau, 0.0)

    q1 = prim.path.evaluate(s, 1)
    pos = prim.path.evaluate(s, 0)
    vel = q1 * sd[:, None]
    acc = prim.path.evaluate(s, 2) * (sd * sd)[:, None] + q1 * useg[:, None]

    past_end = t > tg[-1]
    if np.any(past_end):
        vel[past_end] = 0.0
        acc[past_end] = 0.0
    if scalar:
        return pos[0], vel[0], acc[0]
    return pos, vel, acc


@dataclass
class MotionPrimitiveLibrary:
    """All feasible (path, start speed) primitives plus group index tables."""

    params: ToppParams
    paths: list[GeometricPath]
    primitives: list[MotionPrimitive]
    dropped_pairs: list[tuple[int, int]] = field(default_factory=list)
    config: LibraryConfig | None = None

    def __post_init__(self):
        n_speeds = len(self.params.start_speeds)
        n_prims = len(self.primitives)
        self.group_ids = [
            np.array(
                [p.prim_id for p in self.primitives if p.speed_index == g],
                dtype=np.int64,
            )
            for g in range(n_speeds)
        ]
        self.local_of_global = []
        for g in range(n_speeds):
            local = np.full(n_prims, -1, dtype=np.int64)
            local[self.group_ids[g]] = np.arange(len(self.group_ids[g]))
            self.local_of_global.append(local)
        self.prim_lookup = np.full((len(self.paths), n_speeds), -1, dtype=np.int64)
        for p in self.primitives:
            self.prim_lookup[p.path_index, p.speed_index] = p.prim_id

    @property
    def n_speeds(self) -> int:
        return len(self.params.start_speeds)

    @property
    def length_m(self) -> float:
        return self.paths[0].length_m

    @property
    def max_duration(self) -> float:
        return max(p.duration for p in self.primitives)

    def group(self, speed_index: int) -> np.ndarray:
        return self.group_ids[speed_index]

    def primitive(self, prim_id: int) -> MotionPrimitive:
        return self.primitives[prim_id]


def parameterize_library(
    paths: list[GeometricPath],
    params: ToppParams,
    config: LibraryConfig | None = None,
) -> MotionPrimitiveLibrary:
    """Run the two-pass parameterization for every path and start speed.

    The backward pass depends only on the path and the (zero) terminal speed,
    so it runs once per path; the forward pass runs per start speed.
    Infeasible combinations (e.g. a tight arc entered too fast) are dropped
    and reported, never silently ignored.
    """
    speeds = params.start_speeds
    primitives: list[MotionPrimitive] = []
    dropped: list[tuple[int, int]] = []
    for path in paths:
        cons = build_stage_constraints(path, params)
        sets = backward_pass(cons, s_dot_end=0.0)
        if not sets.feasible:
            dropped.extend((path.index, g) for g in range(len(speeds)))
            continue
        for g, sd0 in enumerate(speeds):
            ok, x, u = forward_pass(cons, sets, sd0)
            if not ok:
                dropped.append((path.index, g))
                continue
            t_grid = time_allocation(cons.s_grid, x)
            primitives.append(
                MotionPrimitive(
                    prim_id=len(primitives),
                    path=path,
                    speed_index=g,
                    start_speed=float(sd0),
                    t_grid=t_grid,
                    x=x,
                    u=u,
                )
            )
    if dropped:
        logger.info(
            "parameterization dropped %d of %d (path, speed) pairs",
            len(dropped),
            len(paths) * len(speeds),
        )
    return MotionPrimitiveLibrary(
        params=params,
        paths=paths,
        primitives=primitives,
        dropped_pairs=dropped,
        config=config,
    )


def build_library(config: LibraryConfig, params: ToppParams) -> MotionPrimitiveLibrary:
    """Convenience: geometric expansion plus parameterization in one call."""
    return parameterize_library(build_path_library(config), params, config=config)
