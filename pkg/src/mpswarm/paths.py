"""Constant-curvature geometric paths and the path library.

Every path starts at the body-frame origin with tangent +x and lies on a
circle of constant radius (or on the x axis for the straight line). Lateral
diversity comes from rolling each planar arc about the +x axis; the library
enumerates a set of arcs times a uniform grid of roll rotations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_EPS = 1e-9
_FULL_TURN_DEG = 360.0


@dataclass(frozen=True)
class ArcSpec:
    """One template arc: radius in meters (math.inf = straight line) and a
    base roll offset in degrees."""

    radius_m: float
    roll_deg: float = 0.0


@dataclass(frozen=True)
class LibraryConfig:
    """Geometric library definition.

    Parameters
    ----------
    arcs : tuple of ArcSpec
        Template arcs. At most one may have infinite radius; the straight
        line is never duplicated by rotation.
    length_m : float
        Common arc length of every path.
    rotation_step_deg : float
        Roll grid spacing; must divide 360 evenly.
    """

    arcs: tuple[ArcSpec, ...]
    length_m: float
    rotation_step_deg: float

    def __post_init__(self):
        if not self.arcs:
            raise ValueError("library needs at least one arc")
        if not (self.length_m > 0.0):
            raise ValueError("length_m must be positive")
        step = self.rotation_step_deg
        if not (0.0 < step <= _FULL_TURN_DEG):
            raise ValueError("rotation_step_deg must be in (0, 360]")
        turns = _FULL_TURN_DEG / step
        if abs(turns - round(turns)) > 1e-9:
            raise ValueError("rotation_step_deg must divide 360 evenly")
        n_straight = 0
        seen: dict[float, list[float]] = {}
        for arc in self.arcs:
            if math.isinf(arc.radius_m):
                n_straight += 1
                continue
            if not (arc.radius_m > 0.0):
                raise ValueError("arc radius must be positive or inf")
            # same radius with roll offsets congruent mod the rotation step
            # would generate duplicate paths
            for prev in seen.get(arc.radius_m, []):
                delta = (arc.roll_deg - prev) % step
                if min(delta, step - delta) < 1e-9:
                    raise ValueError(
                        f"arcs with radius {arc.radius_m} duplicate each other "
                        "under the rotation grid"
                    )
            seen.setdefault(arc.radius_m, []).append(arc.roll_deg)
        if n_straight > 1:
            raise ValueError("at most one straight-line arc is allowed")

    @property
    def rotations(self) -> int:
        return int(round(_FULL_TURN_DEG / self.rotation_step_deg))


def path_count(config: LibraryConfig) -> int:
    """Number of paths the library will contain (straight line counted once)."""
    n_curved = sum(0 if math.isinf(a.radius_m) else 1 for a in config.arcs)
    n_straight = len(config.arcs) - n_curved
    return n_curved * config.rotations + n_straight


@dataclass(frozen=True)
class GeometricPath:
    """A single arc-length-parameterized path in the body frame."""

    radius_m: float
    length_m: float
    total_roll_rad: float
    index: int

    @property
    def straight(self) -> bool:
        return math.isinf(self.radius_m)

    def evaluate(self, s, order: int = 0) -> np.ndarray:
        """Evaluate the path or one of its arc-length derivatives.

        Parameters
        ----------
        s : float or array
            Arc length(s), expected within [0, length_m].
        order : int
            0 -> position q(s), 1 -> unit tangent q'(s), 2 -> curvature
            vector q''(s).

        Returns
        -------
        ndarray, shape (3,) for scalar s else s.shape + (3,)
        """
        s = np.asarray(s, dtype=float)
        out = np.empty(s.shape + (3,))
        if self.straight:
            if order == 0:
                out[..., 0] = s
                out[..., 1] = 0.0
                out[..., 2] = 0.0
            elif order == 1:
                out[..., 0] = 1.0
                out[..., 1] = 0.0
                out[..., 2] = 0.0
            elif order == 2:
                out[...] = 0.0
            else:
                raise ValueError("order must be 0, 1 or 2")
            return out

        r = self.radius_m
        ang = s / r
        cr = math.cos(self.total_roll_rad)
        sr = math.sin(self.total_roll_rad)
        if order == 0:
            lat = r * (1.0 - np.cos(ang))  # in-plane lateral offset
            out[..., 0] = r * np.sin(ang)
            out[..., 1] = cr * lat
            out[..., 2] = sr * lat
        elif order == 1:
            lat = np.sin(ang)
            out[..., 0] = np.cos(ang)
            out[..., 1] = cr * lat
            out[..., 2] = sr * lat
        elif order == 2:
            lat = np.cos(ang) / r
            out[..., 0] = -np.sin(ang) / r
            out[..., 1] = cr * lat
            out[..., 2] = sr * lat
        else:
            raise ValueError("order must be 0, 1 or 2")
        return out

    def end_point(self) -> np.ndarray:
        return self.evaluate(self.length_m)


def evaluate_path(path: GeometricPath, s, order: int = 0) -> np.ndarray:
    """Functional alias for :meth:`GeometricPath.evaluate`."""
    return path.evaluate(s, order)


def build_path_library(config: LibraryConfig) -> list[GeometricPath]:
    """Expand a library config into its full list of geometric paths.

    Order is deterministic: arcs in config order; for each curved arc the
    roll rotations k = 0 .. 360/step - 1 in increasing k. A straight arc
    contributes exactly one path (roll does not change its geometry).
    """
    paths: list[GeometricPath] = []
    step = config.rotation_step_deg
    for arc in config.arcs:
        if math.isinf(arc.radius_m):
            paths.append(
                GeometricPath(
                    radius_m=math.inf,
                    length_m=config.length_m,
                    total_roll_rad=math.radians(arc.roll_deg),
                    index=len(paths),
                )
            )
            continue
        for k in range(config.rotations):
            roll = math.radians(arc.roll_deg + k * step)
            paths.append(
                GeometricPath(
                    radius_m=arc.radius_m,
                    length_m=config.length_m,
                    total_roll_rad=roll,
                    index=len(paths),
                )
            )
    return paths
