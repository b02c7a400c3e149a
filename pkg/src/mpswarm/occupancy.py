"""Precomputed occupancy relations between grid cells and primitives.

Offline, every primitive is discretized into time-interval midpoint samples
and two relations are built over a uniform grid covering the library:

* ``R_o`` - per cell, the sorted ids of primitives with any sample within
  ``d1`` of the cell center (used for robot-obstacle checks);
* ``R_t`` - per cell, ``(primitive id, t_start, t_end)`` giving the single
  merged time window during which the primitive has samples within ``d2`` of
  the cell center (used for robot-robot checks).

Online checks then reduce to hashing query points into cells and unioning the
stored lists; no geometry is evaluated on the hot path. For the obstacle
check the per-cell R_o lists are additionally collapsed into packed path-id
bitsets: all speed variants of a geometric path sweep the same curve, so one
OR over a few machine words per point replaces a gather whose size grows
with the number of variants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .topp import MotionPrimitiveLibrary, sample_primitive


@dataclass(frozen=True)
class GridIndex:
    """Uniform axis-aligned grid with half-open cells [lo, lo + res)."""

    min_corner: np.ndarray  # (3,)
    dims: np.ndarray  # (3,) int
    resolution: float

    @property
    def n_cells(self) -> int:
        return int(self.dims[0] * self.dims[1] * self.dims[2])

    @property
    def max_corner(self) -> np.ndarray:
        return self.min_corner + self.dims * self.resolution

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Linear cell index per point, -1 for points outside the grid."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ijk = np.floor((pts - self.min_corner) / self.resolution).astype(np.int64)
        valid = np.all((ijk >= 0) & (ijk < self.dims), axis=1)
        lin = (ijk[:, 0] * self.dims[1] + ijk[:, 1]) * self.dims[2] + ijk[:, 2]
        lin[~valid] = -1
        return lin

    def center_of(self, cells: np.ndarray) -> np.ndarray:
        """Exact center coordinates of linear cell indices."""
        c = np.atleast_1d(np.asarray(cells, dtype=np.int64))
        nz = int(self.dims[2])
        ny = int(self.dims[1])
        iz = c % nz
        iy = (c // nz) % ny
        ix = c // (nz * ny)
        ijk = np.stack([ix, iy, iz], axis=1).astype(float)
        return self.min_corner + (ijk + 0.5) * self.resolution


def split_coverage_space(
    positions: np.ndarray, d_max: float, resolution: float
) -> GridIndex:
    """Grid covering the sample AABB expanded by d_max, snapped to cells."""
    pos = np.asarray(positions, dtype=float)
    if pos.size == 0:
        raise ValueError("cannot build a grid over zero samples")
    lo = np.floor((pos.min(axis=0) - d_max) / resolution) * resolution
    hi = np.ceil((pos.max(axis=0) + d_max) / resolution) * resolution
    dims = np.maximum(np.round((hi - lo) / resolution).astype(np.int64), 1)
    return GridIndex(min_corner=lo, dims=dims, resolution=float(resolution))


@dataclass(frozen=True)
class SampleTable:
    """Midpoint samples of every primitive, primitive-major and time-ordered.

    Row j of primitive i covers the absolute (primitive-local) interval
    [j * t_res, min((j+1) * t_res, T_i)] and stores the position at the
    interval midpoint.
    """

    prim_ids: np.ndarray  # (n,) int32
    positions: np.ndarray  # (n, 3)
    t_start: np.ndarray  # (n,)
    t_end: np.ndarray  # (n,)
    t_res: float
    n_prims: int

    def __len__(self) -> int:
        return len(self.prim_ids)


def discretize_primitives(
    library: MotionPrimitiveLibrary, t_res: float
) -> SampleTable:
    """Sample every primitive at its time-interval midpoints."""
    if t_res <= 0:
        raise ValueError("t_res must be positive")
    ids, pos, t0s, t1s = [], [], [], []
    for prim in library.primitives:
        T = prim.duration
        m = max(1, int(math.ceil(T / t_res - 1e-9)))
        j = np.arange(m)
        t0 = j * t_res
        t1 = np.minimum((j + 1) * t_res, T)
        mid = 0.5 * (t0 + t1)
        p, _, _ = sample_primitive(prim, mid)
        ids.append(np.full(m, prim.prim_id, dtype=np.int32))
        pos.append(p)
        t0s.append(t0)
        t1s.append(t1)
    return SampleTable(
        prim_ids=np.concatenate(ids),
        positions=np.concatenate(pos),
        t_start=np.concatenate(t0s),
        t_end=np.concatenate(t1s),
        t_res=float(t_res),
        n_prims=len(library.primitives),
    )


@njit(cache=True)
def _relation_scan(
    centers_min,
    res,
    nx,
    ny,
    nz,
    s_pos,
    s_prim,
    s_t0,
    s_t1,
    bucket_indptr,
    bucket_order,
    bsize,
    nbx,
    nby,
    nbz,
    d1sq,
    d2sq,
    emit,
    ro_indptr,
    ro_ids,
    rt_indptr,
    rt_ids,
    rt_t0,
    rt_t1,
    stamp,
    first_t0,
    last_t1,
    near_flag,
    buf,
):  # pragma: no cover - exercised via build_occupancy_relations
    """Cell-major scan; emit=0 counts per cell, emit=1 fills CSR arrays."""
    n_cells = nx * ny * nz
    ro_n = 0
    rt_n = 0
    for cell in range(n_cells):
        iz = cell % nz
        iy = (cell // nz) % ny
        ix = cell // (nz * ny)
        cx = centers_min[0] + (ix + 0.5) * res
        cy = centers_min[1] + (iy + 0.5) * res
        cz = centers_min[2] + (iz + 0.5) * res
        bx = int((cx - centers_min[0]) / bsize)
        by = int((cy - centers_min[1]) / bsize)
        bz = int((cz - centers_min[2]) / bsize)
        n_match = 0
        for ox in range(-1, 2):
            jx = bx + ox
            if jx < 0 or jx >= nbx:
                continue
            for oy in range(-1, 2):
                jy = by + oy
                if jy < 0 or jy >= nby:
                    continue
                for oz in range(-1, 2):
                    jz = bz + oz
                    if jz < 0 or jz >= nbz:
                        continue
                    bkt = (jx * nby + jy) * nbz + jz
                    for k in range(bucket_indptr[bkt], bucket_indptr[bkt + 1]):
                        s = bucket_order[k]
                        dx = s_pos[s, 0] - cx
                        dy = s_pos[s, 1] - cy
                        dz = s_pos[s, 2] - cz
                        dd = dx * dx + dy * dy + dz * dz
                        if dd > d2sq:
                            continue
                        pid = s_prim[s]
                        if stamp[pid] != cell:
                            stamp[pid] = cell
                            buf[n_match] = pid
                            n_match += 1
                            first_t0[pid] = s_t0[s]
                            last_t1[pid] = s_t1[s]
                            near_flag[pid] = dd <= d1sq
                        else:
                            if s_t0[s] < first_t0[pid]:
                                first_t0[pid] = s_t0[s]
                            if s_t1[s] > last_t1[pid]:
                                last_t1[pid] = s_t1[s]
                            if dd <= d1sq:
                                near_flag[pid] = True
        if n_match > 1:
            buf[:n_match].sort()
        if emit == 0:
            for k in range(n_match):
                rt_n += 1
                if near_flag[buf[k]]:
                    ro_n += 1
            ro_indptr[cell + 1] = ro_n
            rt_indptr[cell + 1] = rt_n
        else:
            ro_n = ro_indptr[cell]
            rt_n = rt_indptr[cell]
            for k in range(n_match):
                pid = buf[k]
                rt_ids[rt_n] = pid
                rt_t0[rt_n] = first_t0[pid]
                rt_t1[rt_n] = last_t1[pid]
                rt_n += 1
                if near_flag[pid]:
                    ro_ids[ro_n] = pid
                    ro_n += 1
    return ro_n, rt_n


@njit(cache=True)
def _or_path_bits(indptr, ids, path_of_prim, row, bits):
    one = np.uint64(1)
    for c in range(len(row)):
        r = row[c]
        for k in range(indptr[c], indptr[c + 1]):
            p = path_of_prim[ids[k]]
            bits[r, p >> 6] |= one << np.uint64(p & 63)


def _pack_path_bits(indptr, ids, path_of_prim, n_paths):
    """Collapse per-cell R_o lists into packed path-id bitsets.

    Returns (row, bits): row maps every cell to a row of bits, one uint64
    word per 64 paths; cells with an empty R_o list all share row 0, which
    stays all-zero. The obstacle check ORs one row per point instead of
    gathering id lists, and the shared zero row plus a fixed minimum
    capacity keep that per-point work identical across library sizes: no
    branch on occupancy, no width growth until 512 paths.
    """
    n_cells = len(indptr) - 1
    row = np.zeros(n_cells, dtype=np.int32)
    nonempty = np.nonzero(np.diff(indptr) > 0)[0]
    row[nonempty] = np.arange(1, len(nonempty) + 1, dtype=np.int32)
    words = max(8, -(-int(n_paths) // 64))
    bits = np.zeros((len(nonempty) + 1, words), dtype=np.uint64)
    if len(nonempty):
        _or_path_bits(indptr, ids, path_of_prim, row, bits)
    return row, bits


@dataclass
class OccupancyRelations:
    """CSR-packed R_o / R_t relations over a grid, plus build parameters.

    path_of_prim groups primitives by geometric path; when omitted every
    primitive is its own group and the derived bitsets stay exact per
    primitive. ro_row / ro_path_bits are derived, not stored inputs; cells
    whose R_o list is empty map to the shared all-zero row 0.
    """

    grid: GridIndex
    t_res: float
    d1: float
    d2: float
    n_prims: int
    ro_indptr: np.ndarray  # (n_cells+1,) int64
    ro_ids: np.ndarray  # int32
    rt_indptr: np.ndarray  # (n_cells+1,) int64
    rt_ids: np.ndarray  # int32
    rt_t0: np.ndarray  # float64
    rt_t1: np.ndarray  # float64
    library_hash: str = ""
    r_robot: float = 0.15
    path_of_prim: np.ndarray | None = None  # (n_prims,) int32
    n_paths: int = 0
    ro_row: np.ndarray = field(init=False, repr=False)
    ro_path_bits: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.path_of_prim is None:
            self.path_of_prim = np.arange(self.n_prims, dtype=np.int32)
            self.n_paths = self.n_prims
        self.path_of_prim = np.ascontiguousarray(self.path_of_prim, np.int32)
        if len(self.path_of_prim) != self.n_prims:
            raise ValueError("path_of_prim must map every primitive")
        if self.n_paths <= 0:
            self.n_paths = (
                int(self.path_of_prim.max()) + 1 if self.n_prims else 0
            )
        if self.n_prims and not (
            0 <= int(self.path_of_prim.min())
            and int(self.path_of_prim.max()) < self.n_paths
        ):
            raise ValueError("path ids out of range")
        self.ro_row, self.ro_path_bits = _pack_path_bits(
            self.ro_indptr, self.ro_ids, self.path_of_prim, self.n_paths
        )

    def ro_cell(self, cell: int) -> np.ndarray:
        return self.ro_ids[self.ro_indptr[cell] : self.ro_indptr[cell + 1]]

    def rt_cell(self, cell: int):
        sl = slice(self.rt_indptr[cell], self.rt_indptr[cell + 1])
        return self.rt_ids[sl], self.rt_t0[sl], self.rt_t1[sl]


def build_occupancy_relations(
    table: SampleTable, grid: GridIndex, d1: float, d2: float,
    r_robot: float = 0.15,
    path_of_prim: np.ndarray | None = None,
    n_paths: int = 0,
) -> OccupancyRelations:
    """Scan every cell against a spatial hash of the samples.

    Equivalent to a per-cell-center radius query over the sample set: a
    primitive enters R_o (radius d1) if any of its samples is close enough,
    and R_t (radius d2) with the time window from its first to its last
    matching sample (re-entries are merged conservatively).
    """
    if not (0 < d1 <= d2):
        raise ValueError("need 0 < d1 <= d2")
    nx, ny, nz = (int(v) for v in grid.dims)
    res = grid.resolution
    mn = grid.min_corner.astype(float)

    # coarse buckets of size d2 so one neighbor ring covers the query radius
    bsize = float(d2) * (1.0 + 1e-12)
    nbx = max(1, int(math.ceil(nx * res / bsize)))
    nby = max(1, int(math.ceil(ny * res / bsize)))
    nbz = max(1, int(math.ceil(nz * res / bsize)))
    rel = np.clip(table.positions - mn, 0.0, None)
    bx = np.minimum((rel[:, 0] / bsize).astype(np.int64), nbx - 1)
    by = np.minimum((rel[:, 1] / bsize).astype(np.int64), nby - 1)
    bz = np.minimum((rel[:, 2] / bsize).astype(np.int64), nbz - 1)
    bkt = (bx * nby + by) * nbz + bz
    bucket_order = np.argsort(bkt, kind="stable").astype(np.int64)
    bucket_indptr = np.zeros(nbx * nby * nbz + 1, dtype=np.int64)
    np.cumsum(np.bincount(bkt, minlength=nbx * nby * nbz), out=bucket_indptr[1:])

    n_cells = grid.n_cells
    ro_indptr = np.zeros(n_cells + 1, dtype=np.int64)
    rt_indptr = np.zeros(n_cells + 1, dtype=np.int64)
    stamp = np.full(table.n_prims, -1, dtype=np.int64)
    first_t0 = np.zeros(table.n_prims)
    last_t1 = np.zeros(table.n_prims)
    near_flag = np.zeros(table.n_prims, dtype=np.bool_)
    buf = np.empty(table.n_prims, dtype=np.int32)
    empty_i = np.empty(0, dtype=np.int32)
    empty_f = np.empty(0)

    args = (
        mn,
        res,
        nx,
        ny,
        nz,
        table.positions,
        table.prim_ids,
        table.t_start,
        table.t_end,
        bucket_indptr,
        bucket_order,
        bsize,
        nbx,
        nby,
        nbz,
        float(d1) ** 2,
        float(d2) ** 2,
    )
    _relation_scan(
        *args, 0, ro_indptr, empty_i, rt_indptr, empty_i, empty_f, empty_f,
        stamp, first_t0, last_t1, near_flag, buf,
    )
    ro_ids = np.empty(ro_indptr[-1], dtype=np.int32)
    rt_ids = np.empty(rt_indptr[-1], dtype=np.int32)
    rt_t0 = np.empty(rt_indptr[-1])
    rt_t1 = np.empty(rt_indptr[-1])
    stamp[:] = -1
    _relation_scan(
        *args, 1, ro_indptr, ro_ids, rt_indptr, rt_ids, rt_t0, rt_t1,
        stamp, first_t0, last_t1, near_flag, buf,
    )
    return OccupancyRelations(
        grid=grid,
        t_res=table.t_res,
        d1=float(d1),
        d2=float(d2),
        n_prims=table.n_prims,
        ro_indptr=ro_indptr,
        ro_ids=ro_ids,
        rt_indptr=rt_indptr,
        rt_ids=rt_ids,
        rt_t0=rt_t0,
        rt_t1=rt_t1,
        r_robot=float(r_robot),
        path_of_prim=path_of_prim,
        n_paths=int(n_paths),
    )


def obstacle_query_distance(s_res: float, r_infl: float) -> float:
    """d1: cell half-diagonal plus the required obstacle clearance."""
    return math.sqrt(3.0) / 2.0 * s_res + r_infl


def agent_query_distance(
    s_res: float, r_robot: float, temporal_pad: float = 0.0
) -> float:
    """d2: cell half-diagonal plus two robot radii plus an optional pad.

    The pad covers the distance either trajectory can move away from its
    nearest time-bin midpoint sample (v_max * t_res for two robots); without
    it a continuous-time oracle can exhibit grazing misses of that depth.
    """
    return math.sqrt(3.0) / 2.0 * s_res + 2.0 * r_robot + temporal_pad


def build_relations_for_library(
    library: MotionPrimitiveLibrary,
    s_res: float = 0.1,
    t_res: float = 0.05,
    r_infl: float = 0.3,
    r_robot: float = 0.15,
    temporal_pad: float | None = None,
) -> OccupancyRelations:
    """One-call pipeline: discretize, grid, and build both relations.

    temporal_pad defaults to v_max * t_res * 1.01 (the velocity audit slack),
    making the robot-robot relation conservative against continuous motion.
    """
    if temporal_pad is None:
        temporal_pad = library.params.v_max * t_res * 1.01
    table = discretize_primitives(library, t_res)
    d1 = obstacle_query_distance(s_res, r_infl)
    d2 = agent_query_distance(s_res, r_robot, temporal_pad)
    grid = split_coverage_space(table.positions, max(d1, d2), s_res)
    path_of_prim = np.array(
        [p.path_index for p in library.primitives], dtype=np.int32
    )
    return build_occupancy_relations(
        table, grid, d1, d2, r_robot=r_robot,
        path_of_prim=path_of_prim, n_paths=len(library.paths),
    )
