"""Tiny dense linear programs solved by Seidel's randomized incremental method.

The time-parameterization passes solve a few thousand LPs in one or two
variables per path; generic solvers are overkill there. Seidel's method
handles each LP in expected linear time in the number of rows and is exact
(vertex arithmetic only, no iterative tolerance).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numba import njit

#: half-width of the artificial bounding box used to keep every LP bounded
BIG = 1.0e9

_LCG_MUL = np.uint64(6364136223846793005)
_LCG_INC = np.uint64(1442695040888963407)


class LPStatus(IntEnum):
    OPTIMAL = 0
    INFEASIBLE = 1
    UNBOUNDED = 2


@dataclass(frozen=True)
class LPResult:
    status: LPStatus
    z: np.ndarray
    value: float


@njit(cache=True)
def _seidel_2d(gx, gy, A, b, seed):  # pragma: no cover - exercised via wrapper
    """Maximize g.z subject to A z <= b and |z_i| <= BIG.

    Returns (status, z0, z1) with status 0 optimal / 1 infeasible /
    2 unbounded (optimum escaped to the artificial box).
    """
    m = A.shape[0]
    zx = BIG if gx > 0.0 else (-BIG if gx < 0.0 else 0.0)
    zy = BIG if gy > 0.0 else (-BIG if gy < 0.0 else 0.0)

    order = np.empty(m, np.int64)
    for i in range(m):
        order[i] = i
    state = np.uint64(2 * seed + 1)
    for i in range(m - 1, 0, -1):
        state = state * _LCG_MUL + _LCG_INC
        j = int((state >> np.uint64(33)) % np.uint64(i + 1))
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp

    for k in range(m):
        r = order[k]
        ax = A[r, 0]
        ay = A[r, 1]
        br = b[r]
        if ax * zx + ay * zy <= br + 1e-12 * (abs(br) + 1.0):
            continue
        nrm2 = ax * ax + ay * ay
        if nrm2 == 0.0:
            return 1, 0.0, 0.0  # 0 <= br violated
        # optimum of the first k+1 rows lies on this row's boundary line
        px = ax * br / nrm2
        py = ay * br / nrm2
        dx = -ay
        dy = ax
        tlo = -np.inf
        thi = np.inf
        # artificial box, folded in as four 1-D rows
        for comp in range(2):
            if comp == 0:
                a0 = dx
                p0 = px
            else:
                a0 = dy
                p0 = py
            if a0 > 0.0:
                thi = min(thi, (BIG - p0) / a0)
                tlo = max(tlo, (-BIG - p0) / a0)
            elif a0 < 0.0:
                tlo = max(tlo, (BIG - p0) / a0)
                thi = min(thi, (-BIG - p0) / a0)
            elif abs(p0) > BIG:
                return 1, 0.0, 0.0
        for kk in range(k):
            q = order[kk]
            aq = A[q, 0] * dx + A[q, 1] * dy
            bq = b[q] - (A[q, 0] * px + A[q, 1] * py)
            if aq > 0.0:
                if bq / aq < thi:
                    thi = bq / aq
            elif aq < 0.0:
                if bq / aq > tlo:
                    tlo = bq / aq
            elif bq < -1e-12 * (abs(b[q]) + 1.0):
                return 1, 0.0, 0.0
        if tlo > thi + 1e-12 * (abs(thi) + abs(tlo) + 1.0):
            return 1, 0.0, 0.0
        if tlo > thi:
            thi = tlo  # sliver within tolerance, collapse deterministically
        w = gx * dx + gy * dy
        if w > 0.0:
            t = thi
        elif w < 0.0:
            t = tlo
        else:
            t = min(max(0.0, tlo), thi)
        zx = px + t * dx
        zy = py + t * dy

    lim = BIG * (1.0 - 1e-9)
    if (gx != 0.0 and abs(zx) >= lim) or (gy != 0.0 and abs(zy) >= lim):
        return 2, zx, zy
    return 0, zx, zy


@njit(cache=True)
def _interval_1d(a, b):  # pragma: no cover - exercised via wrapper
    """Feasible interval of {u : a_i u <= b_i} intersected with |u| <= BIG.

    Returns (status, ulo, uhi); status 1 means empty.
    """
    ulo = -BIG
    uhi = BIG
    for i in range(a.shape[0]):
        ai = a[i]
        bi = b[i]
        if ai > 0.0:
            if bi / ai < uhi:
                uhi = bi / ai
        elif ai < 0.0:
            if bi / ai > ulo:
                ulo = bi / ai
        elif bi < -1e-12 * (abs(bi) + 1.0):
            return 1, 0.0, 0.0
    if ulo > uhi + 1e-12 * (abs(ulo) + abs(uhi) + 1.0):
        return 1, 0.0, 0.0
    if ulo > uhi:
        uhi = ulo
    return 0, ulo, uhi


def solve_lp_2var(objective, rows, rhs, seed: int = 0) -> LPResult:
    """Solve max objective.z s.t. rows.z <= rhs over z in R^2.

    Parameters
    ----------
    objective : array-like, shape (2,)
    rows : array-like, shape (m, 2)
    rhs : array-like, shape (m,)
    seed : int
        Seed for the row-insertion shuffle; fixed seed makes the call
        deterministic.

    Notes
    -----
    An artificial box |z_i| <= BIG keeps the problem bounded; an optimum on
    that box is reported as UNBOUNDED, which callers treat as an error (real
    uses always include finite bounds among the rows).
    """
    g = np.asarray(objective, dtype=float)
    A = np.ascontiguousarray(rows, dtype=float).reshape(-1, 2)
    b = np.ascontiguousarray(rhs, dtype=float).reshape(-1)
    if A.shape[0] != b.shape[0]:
        raise ValueError("rows and rhs length mismatch")
    st, zx, zy = _seidel_2d(float(g[0]), float(g[1]), A, b, seed)
    z = np.array([zx, zy])
    return LPResult(LPStatus(st), z, float(g @ z))


def solve_interval_1var(coeffs, rhs):
    """Feasible interval of a one-variable system coeffs*u <= rhs.

    Returns (status, lo, hi); the forward pass maximizes by taking hi.
    """
    a = np.ascontiguousarray(coeffs, dtype=float).reshape(-1)
    b = np.ascontiguousarray(rhs, dtype=float).reshape(-1)
    st, lo, hi = _interval_1d(a, b)
    return LPStatus(st), lo, hi
