"""Binary persistence for primitive libraries and occupancy relations.

Both formats are little-endian, versioned, and round-trip exactly. A
relations file records the SHA-256 of the library file it was built from, and
the loader refuses to pair it with a different library.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .occupancy import GridIndex, OccupancyRelations
from .paths import ArcSpec, GeometricPath, LibraryConfig
from .topp import MotionPrimitive, MotionPrimitiveLibrary, ToppParams

_LIB_MAGIC = b"MPLB"
_REL_MAGIC = b"MPRL"
_LIB_VERSION = 1
_REL_VERSION = 2


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def pack(self, fmt: str, *vals) -> None:
        self.parts.append(struct.pack("<" + fmt, *vals))

    def array(self, arr: np.ndarray, dtype: str) -> None:
        a = np.ascontiguousarray(arr, dtype=dtype)
        self.pack("Q", a.size)
        self.parts.append(a.tobytes())

    def blob(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        vals = struct.unpack_from(fmt, self.data, self.off)
        self.off += struct.calcsize(fmt)
        return vals if len(vals) > 1 else vals[0]

    def array(self, dtype: str) -> np.ndarray:
        n = self.unpack("Q")
        dt = np.dtype(dtype)
        out = np.frombuffer(self.data, dtype=dt, count=n, offset=self.off)
        self.off += n * dt.itemsize
        return out.copy()


def save_library(path, library: MotionPrimitiveLibrary) -> str:
    """Write the library; returns the SHA-256 hex digest of the file."""
    w = _Writer()
    w.pack("4sI", _LIB_MAGIC, _LIB_VERSION)
    p = library.params
    w.pack("dddI", p.v_max, p.a_max, p.speed_step, p.stages)
    cfg = library.config
    w.pack("ddI", cfg.length_m, cfg.rotation_step_deg, len(cfg.arcs))
    for arc in cfg.arcs:
        w.pack("dd", arc.radius_m, arc.roll_deg)
    w.pack("I", len(library.paths))
    for gp in library.paths:
        w.pack("dddI", gp.radius_m, gp.length_m, gp.total_roll_rad, gp.index)
    w.pack("I", len(library.primitives))
    for prim in library.primitives:
        w.pack(
            "IIId",
            prim.prim_id,
            prim.path.index,
            prim.speed_index,
            prim.start_speed,
        )
        w.array(prim.t_grid, "<f8")
        w.array(prim.x, "<f8")
        w.array(prim.u, "<f8")
    w.pack("I", len(library.dropped_pairs))
    for pi, si in library.dropped_pairs:
        w.pack("II", pi, si)
    blob = w.blob()
    with open(path, "wb") as fh:
        fh.write(blob)
    return hashlib.sha256(blob).hexdigest()


def load_library(path) -> tuple[MotionPrimitiveLibrary, str]:
    """Read a library file; returns (library, sha256 hex of the file)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic, version = r.unpack("4sI")
    if magic != _LIB_MAGIC:
        raise ValueError(f"not a primitive library file: {path}")
    if version != _LIB_VERSION:
        raise ValueError(f"unsupported library version {version}")
    v_max, a_max, speed_step, stages = r.unpack("dddI")
    params = ToppParams(
        v_max=v_max, a_max=a_max, speed_step=speed_step, stages=stages
    )
    length_m, rot_step, n_arcs = r.unpack("ddI")
    arcs = []
    for _ in range(n_arcs):
        radius, roll = r.unpack("dd")
        arcs.append(ArcSpec(radius_m=radius, roll_deg=roll))
    config = LibraryConfig(
        arcs=arcs, length_m=length_m, rotation_step_deg=rot_step
    )
    paths = []
    for _ in range(r.unpack("I")):
        radius, length, roll, index = r.unpack("dddI")
        paths.append(
            GeometricPath(
                radius_m=radius,
                length_m=length,
                total_roll_rad=roll,
                index=index,
            )
        )
    prims = []
    for _ in range(r.unpack("I")):
        prim_id, path_index, speed_index, start_speed = r.unpack("IIId")
        t_grid = r.array("<f8")
        x = r.array("<f8")
        u = r.array("<f8")
        prims.append(
            MotionPrimitive(
                prim_id=prim_id,
                path=paths[path_index],
                speed_index=speed_index,
                start_speed=start_speed,
                t_grid=t_grid,
                x=x,
                u=u,
            )
        )
    dropped = []
    for _ in range(r.unpack("I")):
        dropped.append(tuple(r.unpack("II")))
    lib = MotionPrimitiveLibrary(
        params=params,
        paths=paths,
        primitives=prims,
        dropped_pairs=dropped,
        config=config,
    )
    return lib, hashlib.sha256(blob).hexdigest()


def save_relations(path, rel: OccupancyRelations, library_hash: str) -> None:
    w = _Writer()
    w.pack("4sI", _REL_MAGIC, _REL_VERSION)
    w.pack("32s", bytes.fromhex(library_hash))
    w.pack("ddddII", rel.t_res, rel.d1, rel.d2, rel.r_robot, rel.n_prims,
           rel.n_paths)
    g = rel.grid
    w.pack("3d", *g.min_corner)
    w.pack("3I", *g.dims)
    w.pack("d", g.resolution)
    w.array(rel.ro_indptr, "<i8")
    w.array(rel.ro_ids, "<i4")
    w.array(rel.rt_indptr, "<i8")
    w.array(rel.rt_ids, "<i4")
    w.array(rel.rt_t0, "<f8")
    w.array(rel.rt_t1, "<f8")
    w.array(rel.path_of_prim, "<i4")
    with open(path, "wb") as fh:
        fh.write(w.blob())


def load_relations(path, expected_library_hash: str | None = None) -> OccupancyRelations:
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    magic, version = r.unpack("4sI")
    if magic != _REL_MAGIC:
        raise ValueError(f"not an occupancy relations file: {path}")
    if version != _REL_VERSION:
        raise ValueError(f"unsupported relations version {version}")
    lib_hash = r.unpack("32s").hex()
    if expected_library_hash is not None and lib_hash != expected_library_hash:
        raise ValueError(
            "relations were built from a different library "
            f"(file {lib_hash[:12]}.., expected {expected_library_hash[:12]}..)"
        )
    t_res, d1, d2, r_robot, n_prims, n_paths = r.unpack("ddddII")
    min_corner = np.array(r.unpack("3d"))
    dims = np.array(r.unpack("3I"), dtype=np.int64)
    resolution = r.unpack("d")
    grid = GridIndex(min_corner=min_corner, dims=dims, resolution=resolution)
    ro_indptr = r.array("<i8")
    ro_ids = r.array("<i4")
    rt_indptr = r.array("<i8")
    rt_ids = r.array("<i4")
    rt_t0 = r.array("<f8")
    rt_t1 = r.array("<f8")
    path_of_prim = r.array("<i4")
    return OccupancyRelations(
        grid=grid,
        t_res=t_res,
        d1=d1,
        d2=d2,
        n_prims=n_prims,
        ro_indptr=ro_indptr,
        ro_ids=ro_ids,
        rt_indptr=rt_indptr,
        rt_ids=rt_ids,
        rt_t0=rt_t0,
        rt_t1=rt_t1,
        library_hash=lib_hash,
        r_robot=r_robot,
        path_of_prim=path_of_prim,
        n_paths=n_paths,
    )
