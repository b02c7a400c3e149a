"""Obstacle maps, surface point clouds, and omnidirectional range sensing.

Maps are collections of vertical cylinders and axis-aligned boxes. Sensing
returns surface points within range of the sensor - the simulator's stand-in
for a depth sensor sweep - from a precomputed surface sampling of the whole
map, bucketed for fast range queries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Cylinder:
    cx: float
    cy: float
    radius: float
    z0: float
    z1: float


@dataclass(frozen=True)
class BoxObstacle:
    lo: np.ndarray  # (3,)
    hi: np.ndarray  # (3,)


def _cylinder_sdf(points: np.ndarray, cyl: Cylinder) -> np.ndarray:
    """Signed distance to a capped cylinder (negative inside)."""
    dxy = np.hypot(points[:, 0] - cyl.cx, points[:, 1] - cyl.cy) - cyl.radius
    zc = 0.5 * (cyl.z0 + cyl.z1)
    dz = np.abs(points[:, 2] - zc) - 0.5 * (cyl.z1 - cyl.z0)
    outside = np.hypot(np.maximum(dxy, 0.0), np.maximum(dz, 0.0))
    inside = np.minimum(np.maximum(dxy, dz), 0.0)
    return outside + inside


def _box_sdf(points: np.ndarray, box: BoxObstacle) -> np.ndarray:
    center = 0.5 * (box.lo + box.hi)
    half = 0.5 * (box.hi - box.lo)
    d = np.abs(points - center) - half
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=1)
    inside = np.minimum(np.max(d, axis=1), 0.0)
    return outside + inside


def _cylinder_surface(cyl: Cylinder, spacing: float) -> np.ndarray:
    n_ang = max(8, int(math.ceil(2.0 * math.pi * cyl.radius / spacing)))
    n_z = max(2, int(math.ceil((cyl.z1 - cyl.z0) / spacing)) + 1)
    ang = np.arange(n_ang) * (2.0 * math.pi / n_ang)
    zs = np.linspace(cyl.z0, cyl.z1, n_z)
    x = cyl.cx + cyl.radius * np.cos(ang)
    y = cyl.cy + cyl.radius * np.sin(ang)
    pts = np.empty((n_ang * n_z, 3))
    pts[:, 0] = np.repeat(x, n_z)
    pts[:, 1] = np.repeat(y, n_z)
    pts[:, 2] = np.tile(zs, n_ang)
    return pts


def _box_surface(box: BoxObstacle, spacing: float) -> np.ndarray:
    lo, hi = box.lo, box.hi
    grids = [
        np.linspace(lo[k], hi[k], max(2, int(math.ceil((hi[k] - lo[k]) / spacing)) + 1))
        for k in range(3)
    ]
    faces = []
    for axis in range(3):
        u, v = (axis + 1) % 3, (axis + 2) % 3
        uu, vv = np.meshgrid(grids[u], grids[v], indexing="ij")
        for val in (lo[axis], hi[axis]):
            face = np.empty((uu.size, 3))
            face[:, axis] = val
            face[:, u] = uu.ravel()
            face[:, v] = vv.ravel()
            faces.append(face)
    return np.concatenate(faces)


_BUCKET = 1.0  # coarse hash cell for range queries, meters


@dataclass
class ObstacleMap:
    """Static obstacle set with a precomputed, hashed surface sampling."""

    cylinders: list[Cylinder] = field(default_factory=list)
    boxes: list[BoxObstacle] = field(default_factory=list)
    surface_spacing: float = 0.1

    def __post_init__(self):
        clouds = [_cylinder_surface(c, self.surface_spacing) for c in self.cylinders]
        clouds += [_box_surface(b, self.surface_spacing) for b in self.boxes]
        self.surface_points = (
            np.concatenate(clouds) if clouds else np.empty((0, 3))
        )
        pts = self.surface_points
        if len(pts):
            self._lo = pts.min(axis=0)
            ijk = np.floor((pts - self._lo) / _BUCKET).astype(np.int64)
            self._dims = ijk.max(axis=0) + 1
            lin = (ijk[:, 0] * self._dims[1] + ijk[:, 1]) * self._dims[2] + ijk[:, 2]
            order = np.argsort(lin, kind="stable")
            self._order = order
            n_b = int(self._dims.prod())
            self._indptr = np.zeros(n_b + 1, dtype=np.int64)
            np.cumsum(np.bincount(lin, minlength=n_b), out=self._indptr[1:])

    @property
    def n_obstacles(self) -> int:
        return len(self.cylinders) + len(self.boxes)

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance from each point to the nearest obstacle surface."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.n_obstacles == 0:
            return np.full(len(pts), np.inf)
        d = np.full(len(pts), np.inf)
        for cyl in self.cylinders:
            np.minimum(d, _cylinder_sdf(pts, cyl), out=d)
        for box in self.boxes:
            np.minimum(d, _box_sdf(pts, box), out=d)
        return d

    def sense(
        self,
        position: np.ndarray,
        range_m: float,
        rng: np.random.Generator | None = None,
        noise_std: float = 0.0,
    ) -> np.ndarray:
        """Surface points within range of the sensor, with optional jitter."""
        pts = self.surface_points
        if len(pts) == 0:
            return np.empty((0, 3))
        p = np.asarray(position, dtype=float)
        lo_b = np.floor((p - range_m - self._lo) / _BUCKET).astype(np.int64)
        hi_b = np.floor((p + range_m - self._lo) / _BUCKET).astype(np.int64)
        lo_b = np.maximum(lo_b, 0)
        hi_b = np.minimum(hi_b, self._dims - 1)
        if np.any(lo_b > hi_b):
            return np.empty((0, 3))
        xs = np.arange(lo_b[0], hi_b[0] + 1)
        ys = np.arange(lo_b[1], hi_b[1] + 1)
        zs = np.arange(lo_b[2], hi_b[2] + 1)
        lin = (
            (xs[:, None, None] * self._dims[1] + ys[None, :, None])
            * self._dims[2]
            + zs[None, None, :]
        ).ravel()
        counts = self._indptr[lin + 1] - self._indptr[lin]
        total = int(counts.sum())
        if total == 0:
            return np.empty((0, 3))
        starts = self._indptr[lin]
        block = np.concatenate(([0], np.cumsum(counts)[:-1]))
        flat = np.arange(total, dtype=np.int64) + np.repeat(starts - block, counts)
        cand = pts[self._order[flat]]
        keep = np.einsum("ij,ij->i", cand - p, cand - p) <= range_m * range_m
        out = cand[keep]
        if noise_std > 0.0 and rng is not None and len(out):
            out = out + rng.normal(0.0, noise_std, out.shape)
        return out


@dataclass
class MapSpec:
    """Random map recipe: counts, shapes, extents, and protected clearances."""

    n_obstacles: int = 0
    region_lo: tuple = (-13.0, -10.0, 0.0)
    region_hi: tuple = (13.0, 10.0, 3.0)
    radius_range: tuple = (0.3, 0.9)
    cylinder_fraction: float = 1.0
    box_size_range: tuple = (0.4, 1.2)
    clearance_m: float = 1.5
    min_spacing: float = 0.0  # surface gap between obstacles; 0 allows overlap
    surface_spacing: float = 0.1
    max_tries_per_obstacle: int = 200


def generate_map(
    spec: MapSpec, seed: int, protected: np.ndarray | None = None
) -> ObstacleMap:
    """Place obstacles uniformly in the region, rejecting any whose surface
    comes within clearance_m of a protected point (starts and goals)."""
    rng = np.random.default_rng(seed)
    lo = np.asarray(spec.region_lo, dtype=float)
    hi = np.asarray(spec.region_hi, dtype=float)
    prot = (
        np.atleast_2d(np.asarray(protected, dtype=float))
        if protected is not None and len(np.atleast_2d(protected))
        else None
    )
    n_cyl = int(round(spec.n_obstacles * spec.cylinder_fraction))
    cylinders: list[Cylinder] = []
    boxes: list[BoxObstacle] = []
    for k in range(spec.n_obstacles):
        make_cyl = k < n_cyl
        for _ in range(spec.max_tries_per_obstacle):
            cx, cy = rng.uniform(lo[:2], hi[:2])
            if make_cyl:
                r = rng.uniform(*spec.radius_range)
                cand = Cylinder(cx, cy, r, lo[2], hi[2])
            else:
                half = 0.5 * rng.uniform(*spec.box_size_range, size=3)
                center = np.array([cx, cy, 0.5 * (lo[2] + hi[2])])
                cand = BoxObstacle(center - half, center + half)
                cand = BoxObstacle(
                    np.maximum(cand.lo, lo), np.minimum(cand.hi, hi)
                )
            if prot is not None:
                if make_cyl:
                    d = _cylinder_sdf(prot, cand)
                else:
                    d = _box_sdf(prot, cand)
                if np.any(d < spec.clearance_m):
                    continue
            if spec.min_spacing > 0.0 and make_cyl:
                ok = True
                for other in cylinders:
                    gap = (
                        math.hypot(cand.cx - other.cx, cand.cy - other.cy)
                        - cand.radius
                        - other.radius
                    )
                    if gap < spec.min_spacing:
                        ok = False
                        break
                if not ok:
                    continue
            if make_cyl:
                cylinders.append(cand)
            else:
                boxes.append(cand)
            break
        else:
            raise RuntimeError(
                f"could not place obstacle {k + 1}/{spec.n_obstacles}; "
                "relax spacing or clearance"
            )
    return ObstacleMap(
        cylinders=cylinders, boxes=boxes, surface_spacing=spec.surface_spacing
    )
