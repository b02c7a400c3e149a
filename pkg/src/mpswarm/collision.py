"""Online batch collision checks against precomputed occupancy relations.

Both checks operate in the candidate library's body frame: obstacle points
hash to grid cells whose packed path bitsets are OR-ed into an unsafe mask;
peer trajectories are rasterized at the relation's time resolution and
tested for time-window overlap against R_t. Costs are linear in the number
of query points / peer samples, independent of library size.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .occupancy import OccupancyRelations
from .topp import MotionPrimitiveLibrary, sample_primitive

logger = logging.getLogger(__name__)

DEFAULT_CLOUD_BUDGET = 2000  # points kept per collision check
DEFAULT_STACK_FRAMES = 5


def reservoir_sample(stream, k: int, rng: np.random.Generator) -> list:
    """Uniform sample of k items from an iterable of unknown length.

    Single pass (Algorithm L): fills the reservoir with the first k items,
    then jumps over geometrically growing gaps, replacing a random slot at
    each stop. Returns all items if the stream is shorter than k.
    """
    if k <= 0:
        return []
    it = iter(stream)
    reservoir = []
    for item in it:
        reservoir.append(item)
        if len(reservoir) == k:
            break
    else:
        return reservoir
    def _u() -> float:  # uniform on (0, 1], safe to take logs of
        return 1.0 - float(rng.random())

    w = math.exp(math.log(_u()) / k)
    skip = int(math.floor(math.log(_u()) / math.log1p(-w))) if w < 1.0 else 0
    for item in it:
        if skip > 0:
            skip -= 1
            continue
        reservoir[int(rng.integers(k))] = item
        w *= math.exp(math.log(_u()) / k)
        skip = int(math.floor(math.log(_u()) / math.log1p(-w))) if w < 1.0 else 0
    return reservoir


def sample_cloud(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform without-replacement subsample of an (n, 3) array.

    Distributionally identical to reservoir_sample over the rows but runs in
    compiled code; used on the hot path where the cloud is already in memory.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) <= k:
        return pts
    idx = rng.choice(len(pts), size=k, replace=False)
    idx.sort()
    return pts[idx]


class PointCloudStack:
    """Rolling buffer of the last few sensor frames."""

    def __init__(self, max_frames: int = DEFAULT_STACK_FRAMES):
        if max_frames < 1:
            raise ValueError("need at least one frame")
        self.max_frames = max_frames
        self._frames: list[np.ndarray] = []

    def push(self, points: np.ndarray) -> None:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        self._frames.append(pts)
        if len(self._frames) > self.max_frames:
            self._frames.pop(0)

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def n_points(self) -> int:
        return sum(len(f) for f in self._frames)

    def merged(self) -> np.ndarray:
        if not self._frames:
            return np.empty((0, 3))
        return np.concatenate(self._frames, axis=0)


@dataclass(frozen=True)
class PeerTrajectory:
    """Published plan of another agent: everything needed to rasterize it."""

    agent_id: int
    t_start: float
    rotation: np.ndarray  # (3,3) body->world
    origin: np.ndarray  # (3,) world start position
    prim_id: int
    speed_index: int
    #: optional precomputed full raster (positions, t0, t1); a bus that
    #: fans one record out to many receivers fills it in at publish time
    raster: tuple | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class PeerStop:
    """Published stop of another agent: a straight maximum-deceleration
    segment (empty when already at rest) followed by indefinite rest."""

    agent_id: int
    p0: np.ndarray  # (3,) world position where braking began
    direction: np.ndarray  # (3,) unit travel direction, zero at rest
    v0: float
    t0: float
    decel: float
    raster: tuple | None = field(default=None, compare=False, repr=False)

    @property
    def stop_time(self) -> float:
        return self.v0 / self.decel if self.v0 > 0.0 else 0.0

    @property
    def rest_point(self) -> np.ndarray:
        return self.p0 + self.direction * (0.5 * self.v0 * self.stop_time)


def _ragged_gather(indptr: np.ndarray, keys: np.ndarray):
    """Flatten CSR blocks for the given keys.

    Returns (flat_indices, counts): indices into the CSR data arrays for
    every entry of every key, block-concatenated in key order.
    """
    starts = indptr[keys]
    counts = (indptr[keys + 1] - starts).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), counts
    block_off = np.concatenate(([0], np.cumsum(counts)[:-1]))
    flat = np.arange(total, dtype=np.int64) + np.repeat(starts - block_off, counts)
    return flat, counts


@njit(cache=True)
def _accumulate_path_hits(pts, mn, res, nx, ny, nz, ro_row, bits, acc):
    # OR the path bitset of every occupied cell into one accumulator
    for k in range(pts.shape[0]):
        i = int(math.floor((pts[k, 0] - mn[0]) / res))
        if i < 0 or i >= nx:
            continue
        j = int(math.floor((pts[k, 1] - mn[1]) / res))
        if j < 0 or j >= ny:
            continue
        l = int(math.floor((pts[k, 2] - mn[2]) / res))
        if l < 0 or l >= nz:
            continue
        r = ro_row[(i * ny + j) * nz + l]
        for w in range(acc.shape[0]):
            acc[w] |= bits[r, w]


@njit(cache=True)
def _expand_path_hits(acc, path_of_prim, local_of_global, mask):
    # set the mask slot of every candidate whose path bit is on
    one = np.uint64(1)
    newly = 0
    for g in range(path_of_prim.shape[0]):
        p = path_of_prim[g]
        if (acc[p >> 6] >> np.uint64(p & 63)) & one:
            loc = local_of_global[g]
            if loc >= 0 and not mask[loc]:
                mask[loc] = True
                newly += 1
    return newly


def mark_obstacle_conflicts(
    points_v: np.ndarray,
    relations: OccupancyRelations,
    local_of_global: np.ndarray,
    mask: np.ndarray,
) -> int:
    """Flag every primitive whose path touches a cell holding an obstacle
    point.

    points_v are obstacle points already transformed into the candidate
    body frame; points outside the relation grid cannot conflict with any
    primitive and are ignored. Flags are resolved at path granularity: a
    hit on any speed variant flags all variants of that path. The variants
    sweep the same curve with samples at most half a time bin apart, so the
    widening stays well inside the cell-quantization margin already present
    in d1, and the per-point cost becomes a fixed few words. Returns the
    number of newly flagged primitives in the active group.
    """
    pts = np.ascontiguousarray(np.asarray(points_v, dtype=float).reshape(-1, 3))
    if len(pts) == 0:
        return 0
    grid = relations.grid
    acc = np.zeros(relations.ro_path_bits.shape[1], dtype=np.uint64)
    _accumulate_path_hits(
        pts,
        np.ascontiguousarray(grid.min_corner, dtype=float),
        float(grid.resolution),
        int(grid.dims[0]),
        int(grid.dims[1]),
        int(grid.dims[2]),
        relations.ro_row,
        relations.ro_path_bits,
        acc,
    )
    if not acc.any():
        return 0
    return int(
        _expand_path_hits(
            acc,
            relations.path_of_prim,
            np.ascontiguousarray(local_of_global, dtype=np.int64),
            mask,
        )
    )


def full_peer_raster(
    peer: PeerTrajectory, library: MotionPrimitiveLibrary, t_res: float
):
    """Rasterize a published plan over its whole life, past included.

    Returns (positions_world, abs_t0, abs_t1): one row per time bin of the
    peer's own plan clock, positions at bin midpoints, intervals in absolute
    time, plus a final row at the end point with an open-ended window
    (t1 = +inf). The result depends only on the record, so a bus can compute
    it once at publish time and attach it as peer.raster.
    """
    prim = library.primitives[peer.prim_id]
    T = prim.duration
    end_w = peer.rotation @ prim.end_point + peer.origin
    j1 = int(math.ceil(T / t_res - 1e-9))
    if j1 <= 0:
        return end_w[None, :], np.array([peer.t_start + T]), np.array([np.inf])
    j = np.arange(j1)
    t0 = j * t_res
    t1 = np.minimum((j + 1) * t_res, T)
    mid = 0.5 * (t0 + t1)
    pos_body, _, _ = sample_primitive(prim, mid)
    pos_world = pos_body @ peer.rotation.T + peer.origin
    pos_world = np.concatenate([pos_world, end_w[None, :]])
    abs_t0 = np.concatenate([peer.t_start + t0, [peer.t_start + T]])
    abs_t1 = np.concatenate([peer.t_start + t1, [np.inf]])
    return pos_world, abs_t0, abs_t1


def full_stop_raster(stop: PeerStop, t_res: float):
    """Rasterize a published stop over its whole life, past included.

    Same row layout as full_peer_raster: braking-segment bins, then the
    rest point with an open-ended window.
    """
    T = stop.stop_time
    rest = stop.rest_point
    j1 = int(math.ceil(T / t_res - 1e-9))
    if j1 <= 0:
        return rest[None, :], np.array([stop.t0 + T]), np.array([np.inf])
    j = np.arange(j1)
    t0 = j * t_res
    t1 = np.minimum((j + 1) * t_res, T)
    mid = np.minimum(0.5 * (t0 + t1), T)
    dist = stop.v0 * mid - 0.5 * stop.decel * mid**2
    pos = stop.p0 + dist[:, None] * stop.direction
    pos = np.concatenate([pos, rest[None, :]])
    abs_t0 = np.concatenate([stop.t0 + t0, [stop.t0 + T]])
    abs_t1 = np.concatenate([stop.t0 + t1, [np.inf]])
    return pos, abs_t0, abs_t1


def _trim_raster(raster, t_begin: float, t_now: float, t_res: float):
    """Drop the bins of a full raster that ended before t_now.

    Row k covers [t_begin + k t_res, ...] except the last (rest) row, which
    never expires; slicing at floor(elapsed / t_res) therefore reproduces a
    rasterization started at t_now exactly.
    """
    pos, a, b = raster
    j0 = int(math.floor((t_now - t_begin) / t_res))
    j0 = min(max(j0, 0), len(pos) - 1)
    if j0 == 0:
        return raster
    return pos[j0:], a[j0:], b[j0:]


def rasterize_peer(
    peer: PeerTrajectory, library: MotionPrimitiveLibrary, t_now: float, t_res: float
):
    """Sample a peer's remaining trajectory at the relation time resolution.

    Returns (positions_world, abs_t0, abs_t1): the not-yet-expired rows of
    the record's full raster. Every primitive ends at rest, so under radio
    silence the publisher is pinned at the end point once the plan runs
    out: the final row is that point with an open-ended window (t1 = +inf).
    It stays valid until the peer publishes something newer. Uses the
    precomputed peer.raster when the record carries one.
    """
    full = peer.raster
    if full is None:
        full = full_peer_raster(peer, library, t_res)
    return _trim_raster(full, peer.t_start, t_now, t_res)


def rasterize_stop(stop: PeerStop, t_now: float, t_res: float):
    """Sample a stopping peer's remaining occupancy.

    Returns (positions_world, abs_t0, abs_t1): time bins covering whatever
    remains of the braking segment, then one row at the rest point with an
    open-ended window. A parked robot occupies its rest point until it
    publishes something newer, so the final t1 is +inf. Uses the
    precomputed stop.raster when the record carries one.
    """
    full = stop.raster
    if full is None:
        full = full_stop_raster(stop, t_res)
    return _trim_raster(full, stop.t0, t_now, t_res)


def mark_agent_conflicts(
    peers,
    rotation: np.ndarray,
    origin: np.ndarray,
    t_plan_start: float,
    t_now: float,
    relations: OccupancyRelations,
    local_of_global: np.ndarray,
    mask: np.ndarray,
    library: MotionPrimitiveLibrary,
) -> int:
    """Flag candidate primitives whose occupancy overlaps any peer's in
    space and time.

    rotation/origin place the candidate body frame in the world;
    t_plan_start shifts the stored primitive-local windows into absolute
    time (it equals t_now when scoring a fresh plan, or the executing plan's
    start when re-validating it). Peers are either plans (PeerTrajectory) or
    stops (PeerStop); those referencing unknown primitives are skipped with
    a warning. Returns the number of newly flagged primitives.
    """
    pos_list, a_list, b_list = [], [], []
    n_prims = len(library.primitives)
    for peer in peers:
        if isinstance(peer, PeerStop):
            pos, a, b = rasterize_stop(peer, t_now, relations.t_res)
            pos_list.append(pos)
            a_list.append(a)
            b_list.append(b)
            continue
        if not (0 <= peer.prim_id < n_prims):
            logger.warning(
                "peer %d references unknown primitive %d; skipped",
                peer.agent_id,
                peer.prim_id,
            )
            continue
        if library.primitives[peer.prim_id].speed_index != peer.speed_index:
            logger.warning(
                "peer %d speed index mismatch for primitive %d; skipped",
                peer.agent_id,
                peer.prim_id,
            )
            continue
        pos, a, b = rasterize_peer(peer, library, t_now, relations.t_res)
        if len(pos):
            pos_list.append(pos)
            a_list.append(a)
            b_list.append(b)
    if not pos_list:
        return 0
    pos_w = np.concatenate(pos_list)
    t_a = np.concatenate(a_list)
    t_b = np.concatenate(b_list)

    pos_v = (pos_w - origin) @ rotation  # world -> body: R^T (p - o)
    cells = relations.grid.cell_of(pos_v)
    keep = cells >= 0
    if not np.any(keep):
        return 0
    cells = cells[keep]
    t_a = t_a[keep]
    t_b = t_b[keep]

    flat, counts = _ragged_gather(relations.rt_indptr, cells)
    if len(flat) == 0:
        return 0
    ent_t0 = relations.rt_t0[flat] + t_plan_start
    ent_t1 = relations.rt_t1[flat] + t_plan_start
    hit = (ent_t0 <= np.repeat(t_b, counts)) & (np.repeat(t_a, counts) <= ent_t1)
    if not np.any(hit):
        return 0
    loc = local_of_global[relations.rt_ids[flat[hit]].astype(np.int64)]
    loc = loc[loc >= 0]
    if len(loc) == 0:
        return 0
    before = int(np.count_nonzero(mask))
    mask[loc] = True
    return int(np.count_nonzero(mask)) - before
