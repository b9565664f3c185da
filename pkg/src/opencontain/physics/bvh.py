"""BVH over mesh triangles: sphere-overlap queries and mesh-mesh overlap tests.

The tree is built once per mesh in body coordinates (median split on the
longest centroid axis); queries take body-frame points. Query kernels are
nopython, allocation-free, and deterministic, so they can run on worker
threads without holding the GIL.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..geometry import RigidTransform, TriangleMesh

LEAF_SIZE = 4
_STACK = 128


@dataclass(frozen=True)
class CollisionIndex:
    """Flattened BVH. Leaf nodes cover contiguous slot ranges of ``tri_index``.

    ``node_left[i] >= 0``: internal node with children (left, right).
    ``node_left[i] < 0``: leaf covering slots [-(node_left[i]+1), node_right[i]).
    Corner arrays v0/v1/v2 are stored in slot order for cache-friendly leaves.
    """

    node_min: np.ndarray
    node_max: np.ndarray
    node_left: np.ndarray
    node_right: np.ndarray
    tri_index: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    @property
    def n_triangles(self) -> int:
        return len(self.tri_index)

    @property
    def body_radius(self) -> float:
        """Bound on |vertex| in body frame; used for kinematic motion margins."""
        return float(np.linalg.norm(np.stack([self.v0, self.v1, self.v2]).reshape(-1, 3), axis=1).max())


def build_collision_index(mesh: TriangleMesh) -> CollisionIndex:
    a, b, c = mesh.corners()
    m = len(a)
    if m == 0:
        raise ValueError("cannot index an empty mesh")
    tri_min = np.minimum(np.minimum(a, b), c)
    tri_max = np.maximum(np.maximum(a, b), c)
    cent = 0.5 * (tri_min + tri_max)

    perm = np.arange(m, dtype=np.int64)
    node_min: list[np.ndarray] = []
    node_max: list[np.ndarray] = []
    node_left: list[int] = []
    node_right: list[int] = []

    # explicit stack of (start, end, slot); slots pre-reserved so children
    # can be patched into their parent deterministically
    stack = [(0, m, _reserve(node_min, node_max, node_left, node_right))]
    while stack:
        s, e, slot = stack.pop()
        idx = perm[s:e]
        node_min[slot] = tri_min[idx].min(axis=0)
        node_max[slot] = tri_max[idx].max(axis=0)
        if e - s <= LEAF_SIZE:
            node_left[slot] = -(s + 1)
            node_right[slot] = e
            continue
        spread = cent[idx].max(axis=0) - cent[idx].min(axis=0)
        axis = int(np.argmax(spread))
        order = idx[np.argsort(cent[idx, axis], kind="stable")]
        perm[s:e] = order
        mid = (s + e) // 2
        left = _reserve(node_min, node_max, node_left, node_right)
        right = _reserve(node_min, node_max, node_left, node_right)
        node_left[slot] = left
        node_right[slot] = right
        stack.append((mid, e, right))
        stack.append((s, mid, left))

    return CollisionIndex(
        node_min=np.ascontiguousarray(node_min, dtype=np.float64),
        node_max=np.ascontiguousarray(node_max, dtype=np.float64),
        node_left=np.asarray(node_left, dtype=np.int64),
        node_right=np.asarray(node_right, dtype=np.int64),
        tri_index=perm,
        v0=np.ascontiguousarray(a[perm]),
        v1=np.ascontiguousarray(b[perm]),
        v2=np.ascontiguousarray(c[perm]),
    )


def _reserve(nmin: list, nmax: list, nleft: list, nright: list) -> int:
    nmin.append(np.zeros(3))
    nmax.append(np.zeros(3))
    nleft.append(0)
    nright.append(0)
    return len(nleft) - 1


def query_sphere(index: CollisionIndex, point, radius: float) -> np.ndarray:
    """All original triangle indices within ``radius`` of ``point``, ascending."""
    p = np.asarray(point, dtype=np.float64).reshape(3)
    out = np.empty(index.n_triangles, dtype=np.int64)
    n = _query_sphere_into(
        index.node_min, index.node_max, index.node_left, index.node_right,
        index.v0, index.v1, index.v2,
        p[0], p[1], p[2], float(radius), out,
    )
    hits = index.tri_index[out[:n]]
    hits.sort()
    return hits


@njit(cache=True, nogil=True, inline="always")
def _closest_point_triangle(px, py, pz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Closest point on triangle abc to point p (Ericson, RTCD 5.1.5)."""
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@njit(cache=True, nogil=True, inline="always")
def _box_dist2(px, py, pz, mnx, mny, mnz, mxx, mxy, mxz):
    d = 0.0
    if px < mnx:
        d += (mnx - px) ** 2
    elif px > mxx:
        d += (px - mxx) ** 2
    if py < mny:
        d += (mny - py) ** 2
    elif py > mxy:
        d += (py - mxy) ** 2
    if pz < mnz:
        d += (mnz - pz) ** 2
    elif pz > mxz:
        d += (pz - mxz) ** 2
    return d


@njit(cache=True, nogil=True)
def _query_sphere_into(node_min, node_max, node_left, node_right,
                       v0, v1, v2, px, py, pz, r, out):
    """Write BVH slot indices of triangles within r of p into out; return count."""
    r2 = r * r
    n = 0
    stack = np.empty(_STACK, dtype=np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _box_dist2(px, py, pz,
                      node_min[node, 0], node_min[node, 1], node_min[node, 2],
                      node_max[node, 0], node_max[node, 1], node_max[node, 2]) > r2:
            continue
        left = node_left[node]
        if left >= 0:
            stack[top] = left
            stack[top + 1] = node_right[node]
            top += 2
        else:
            s = -(left + 1)
            e = node_right[node]
            for t in range(s, e):
                qx, qy, qz = _closest_point_triangle(
                    px, py, pz,
                    v0[t, 0], v0[t, 1], v0[t, 2],
                    v1[t, 0], v1[t, 1], v1[t, 2],
                    v2[t, 0], v2[t, 1], v2[t, 2])
                dx, dy, dz = px - qx, py - qy, pz - qz
                if dx * dx + dy * dy + dz * dz <= r2:
                    if n >= len(out):
                        return -1
                    out[n] = t
                    n += 1
    return n


# ---------------------------------------------------------------------------
# mesh-mesh overlap (feasibility guard for the cup's initial pose)

@njit(cache=True, nogil=True, inline="always")
def _point_in_tri_2d(px, py, ax, ay, bx, by, cx, cy):
    d1 = (px - bx) * (ay - by) - (ax - bx) * (py - by)
    d2 = (px - cx) * (by - cy) - (bx - cx) * (py - cy)
    d3 = (px - ax) * (cy - ay) - (cx - ax) * (py - ay)
    has_neg = (d1 < 0.0) or (d2 < 0.0) or (d3 < 0.0)
    has_pos = (d1 > 0.0) or (d2 > 0.0) or (d3 > 0.0)
    return not (has_neg and has_pos)


@njit(cache=True, nogil=True)
def _seg_crosses_tri(a, b, p, q, r):
    """Segment ab crosses the interior of triangle pqr transversally."""
    e1 = q - p
    e2 = r - p
    nx = e1[1] * e2[2] - e1[2] * e2[1]
    ny = e1[2] * e2[0] - e1[0] * e2[2]
    nz = e1[0] * e2[1] - e1[1] * e2[0]
    da = nx * (a[0] - p[0]) + ny * (a[1] - p[1]) + nz * (a[2] - p[2])
    db = nx * (b[0] - p[0]) + ny * (b[1] - p[1]) + nz * (b[2] - p[2])
    if da * db > 0.0 or da == db:
        return False
    t = da / (da - db)
    xx = a[0] + t * (b[0] - a[0])
    xy = a[1] + t * (b[1] - a[1])
    xz = a[2] + t * (b[2] - a[2])
    # barycentric membership, projected to the dominant normal axis
    anx, any_, anz = abs(nx), abs(ny), abs(nz)
    if anx >= any_ and anx >= anz:
        return _point_in_tri_2d(xy, xz, p[1], p[2], q[1], q[2], r[1], r[2])
    if any_ >= anz:
        return _point_in_tri_2d(xx, xz, p[0], p[2], q[0], q[2], r[0], r[2])
    return _point_in_tri_2d(xx, xy, p[0], p[1], q[0], q[1], r[0], r[1])


@njit(cache=True, nogil=True)
def _tri_tri_overlap(a0, a1, a2, b0, b1, b2):
    if _seg_crosses_tri(a0, a1, b0, b1, b2):
        return True
    if _seg_crosses_tri(a1, a2, b0, b1, b2):
        return True
    if _seg_crosses_tri(a2, a0, b0, b1, b2):
        return True
    if _seg_crosses_tri(b0, b1, a0, a1, a2):
        return True
    if _seg_crosses_tri(b1, b2, a0, a1, a2):
        return True
    return _seg_crosses_tri(b2, b0, a0, a1, a2)


@njit(cache=True, nogil=True)
def _overlap_kernel(a_min, a_max, a_left, a_right, av0, av1, av2,
                    b_min, b_max, b_left, b_right, bv0, bv1, bv2,
                    rot, trans):
    """Any triangle of A intersecting any triangle of B posed by (rot, trans)
    into A's frame. Boxes of B are transformed conservatively."""
    absr = np.abs(rot)
    stack = np.empty((_STACK * 4, 2), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    top = 1
    while top > 0:
        top -= 1
        na = stack[top, 0]
        nb = stack[top, 1]
        # transform B node box into A frame (center/half-extent bound)
        cb = 0.5 * (b_min[nb] + b_max[nb])
        hb = 0.5 * (b_max[nb] - b_min[nb])
        cw = rot @ cb + trans
        hw = absr @ hb
        sep = False
        for k in range(3):
            if cw[k] + hw[k] < a_min[na, k] or cw[k] - hw[k] > a_max[na, k]:
                sep = True
                break
        if sep:
            continue
        a_leaf = a_left[na] < 0
        b_leaf = b_left[nb] < 0
        if a_leaf and b_leaf:
            sa = -(a_left[na] + 1)
            ea = a_right[na]
            sb = -(b_left[nb] + 1)
            eb = b_right[nb]
            for i in range(sa, ea):
                for j in range(sb, eb):
                    w0 = rot @ bv0[j] + trans
                    w1 = rot @ bv1[j] + trans
                    w2 = rot @ bv2[j] + trans
                    if _tri_tri_overlap(av0[i], av1[i], av2[i], w0, w1, w2):
                        return True
        elif b_leaf or (not a_leaf and
                        (a_max[na] - a_min[na]).sum() >= (b_max[nb] - b_min[nb]).sum()):
            stack[top, 0] = a_left[na]
            stack[top, 1] = nb
            stack[top + 1, 0] = a_right[na]
            stack[top + 1, 1] = nb
            top += 2
        else:
            stack[top, 0] = na
            stack[top, 1] = b_left[nb]
            stack[top + 1, 0] = na
            stack[top + 1, 1] = b_right[nb]
            top += 2
    return False


def meshes_overlap(index_a: CollisionIndex, pose_a: RigidTransform,
                   index_b: CollisionIndex, pose_b: RigidTransform) -> bool:
    """True if the two posed triangle meshes intersect (transversal crossings
    and interior overlaps; exact grazing contact is not claimed)."""
    rel = pose_a.inverse().compose(pose_b)  # B body -> A body
    return bool(_overlap_kernel(
        index_a.node_min, index_a.node_max, index_a.node_left, index_a.node_right,
        index_a.v0, index_a.v1, index_a.v2,
        index_b.node_min, index_b.node_max, index_b.node_left, index_b.node_right,
        index_b.v0, index_b.v1, index_b.v2,
        np.ascontiguousarray(rel.rotation), np.ascontiguousarray(rel.translation),
    ))
