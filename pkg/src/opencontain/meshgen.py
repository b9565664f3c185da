"""Procedural triangle meshes: boxes, shells, truncated cones.

These cover two needs: the pouring cup, and small synthetic shapes for
exercising the pipeline without scanned data. All generators return plain
TriangleMesh values in meters with outward-facing windings.
"""
from __future__ import annotations

import numpy as np

from .geometry import TriangleMesh


class _Builder:
    def __init__(self):
        self.verts: list[tuple[float, float, float]] = []
        self.tris: list[tuple[int, int, int]] = []

    def vertex(self, x: float, y: float, z: float) -> int:
        self.verts.append((float(x), float(y), float(z)))
        return len(self.verts) - 1

    def tri(self, a: int, b: int, c: int) -> None:
        self.tris.append((a, b, c))

    def quad(self, a: int, b: int, c: int, d: int) -> None:
        self.tri(a, b, c)
        self.tri(a, c, d)

    def mesh(self, name: str) -> TriangleMesh:
        return TriangleMesh(np.array(self.verts, dtype=np.float64),
                            np.array(self.tris, dtype=np.int64), name=name)


def translate(mesh: TriangleMesh, offset) -> TriangleMesh:
    off = np.asarray(offset, dtype=np.float64).reshape(3)
    return TriangleMesh(mesh.vertices + off, mesh.triangles, name=mesh.name)


def merge(meshes, name: str = "merged") -> TriangleMesh:
    """Concatenate meshes into one (soup union; parts may interpenetrate)."""
    meshes = list(meshes)
    if not meshes:
        raise ValueError("nothing to merge")
    verts, tris, base = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        tris.append(m.triangles + base)
        base += len(m.vertices)
    return TriangleMesh(np.vstack(verts), np.vstack(tris), name=name)


def solid_box(sx: float, sy: float, sz: float, name: str = "box") -> TriangleMesh:
    """Closed box, bottom face on z=0, centered in x and y."""
    b = _Builder()
    hx, hy = sx / 2.0, sy / 2.0
    lo = [b.vertex(x, y, 0.0) for x, y in ((-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy))]
    hi = [b.vertex(x, y, sz) for x, y in ((-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy))]
    b.quad(lo[0], lo[3], lo[2], lo[1])          # bottom, normal -z
    b.quad(hi[0], hi[1], hi[2], hi[3])          # top, normal +z
    for k in range(4):
        k2 = (k + 1) % 4
        b.quad(lo[k], lo[k2], hi[k2], hi[k])    # side walls
    return b.mesh(name)


def _rect_ring(b: _Builder, hx: float, hy: float, z: float) -> list[int]:
    return [b.vertex(x, y, z) for x, y in ((-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy))]


def _ring_wall(b: _Builder, bottom: list[int], top: list[int], outward: bool) -> None:
    n = len(bottom)
    for k in range(n):
        k2 = (k + 1) % n
        if outward:
            b.quad(bottom[k], bottom[k2], top[k2], top[k])
        else:
            b.quad(bottom[k], top[k], top[k2], bottom[k2])


def _rect_annulus(b: _Builder, inner: list[int], outer: list[int], up: bool) -> None:
    # both rings ordered counterclockwise from (-. -.)
    for k in range(4):
        k2 = (k + 1) % 4
        if up:
            b.quad(inner[k], outer[k], outer[k2], inner[k2])
        else:
            b.quad(inner[k], inner[k2], outer[k2], outer[k])


def open_box(sx: float, sy: float, sz: float, wall: float,
             name: str = "open_box") -> TriangleMesh:
    """Five-sided box open at the top; outer footprint sx by sy, height sz."""
    if wall <= 0 or 2 * wall >= min(sx, sy) or wall >= sz:
        raise ValueError("wall thickness leaves no cavity")
    b = _Builder()
    hx, hy = sx / 2.0, sy / 2.0
    ix, iy = hx - wall, hy - wall
    o_lo = _rect_ring(b, hx, hy, 0.0)
    o_hi = _rect_ring(b, hx, hy, sz)
    i_lo = _rect_ring(b, ix, iy, wall)
    i_hi = _rect_ring(b, ix, iy, sz)
    b.quad(o_lo[0], o_lo[3], o_lo[2], o_lo[1])    # outer bottom
    b.quad(i_lo[0], i_lo[1], i_lo[2], i_lo[3])    # cavity floor
    _ring_wall(b, o_lo, o_hi, outward=True)
    _ring_wall(b, i_lo, i_hi, outward=False)
    _rect_annulus(b, i_hi, o_hi, up=True)         # rim
    return b.mesh(name)


def tent_block(sx: float, sy: float, ridge_z: float, eave_z: float,
               name: str = "tent") -> TriangleMesh:
    """Solid block with a gabled top: ridge along x at y=0, eaves at y=+-sy/2.

    Cross-section is a pentagon (flat bottom on z=0, vertical side walls up to
    eave_z, two roof slopes meeting at ridge_z). Steep roofs shed resting
    spheres sideways.
    """
    if not 0.0 < eave_z < ridge_z:
        raise ValueError("need 0 < eave_z < ridge_z")
    b = _Builder()
    hx, hy = sx / 2.0, sy / 2.0
    # pentagon corners, counterclockwise seen from +x
    profile = ((-hy, 0.0), (hy, 0.0), (hy, eave_z), (0.0, ridge_z), (-hy, eave_z))
    neg = [b.vertex(-hx, y, z) for y, z in profile]
    pos = [b.vertex(hx, y, z) for y, z in profile]
    for k in range(1, 4):
        b.tri(neg[0], neg[k + 1], neg[k])      # cap at -x
        b.tri(pos[0], pos[k], pos[k + 1])      # cap at +x
    for k in range(5):
        k2 = (k + 1) % 5
        b.quad(neg[k], neg[k2], pos[k2], pos[k])
    return b.mesh(name)


def wedge_block(sx: float, sy: float, high_z: float, low_z: float,
                name: str = "wedge") -> TriangleMesh:
    """Solid mono-pitch block: top slopes from high_z at y=-sy/2 down to
    low_z at y=+sy/2. A steep pitch sheds resting spheres toward +y."""
    if not 0.0 < low_z < high_z:
        raise ValueError("need 0 < low_z < high_z")
    b = _Builder()
    hx, hy = sx / 2.0, sy / 2.0
    profile = ((-hy, 0.0), (hy, 0.0), (hy, low_z), (-hy, high_z))
    neg = [b.vertex(-hx, y, z) for y, z in profile]
    pos = [b.vertex(hx, y, z) for y, z in profile]
    for k in range(1, 3):
        b.tri(neg[0], neg[k + 1], neg[k])      # cap at -x
        b.tri(pos[0], pos[k], pos[k + 1])      # cap at +x
    for k in range(4):
        k2 = (k + 1) % 4
        b.quad(neg[k], neg[k2], pos[k2], pos[k])
    return b.mesh(name)


def holed_box(sx: float, sy: float, sz: float, wall: float,
              hole_x: float, hole_y: float, name: str = "holed_box") -> TriangleMesh:
    """Open-top box whose floor has a centered rectangular hole."""
    if wall <= 0 or 2 * wall >= min(sx, sy) or wall >= sz:
        raise ValueError("wall thickness leaves no cavity")
    ix, iy = sx / 2.0 - wall, sy / 2.0 - wall
    if hole_x <= 0 or hole_y <= 0 or hole_x / 2.0 >= ix or hole_y / 2.0 >= iy:
        raise ValueError("hole must be smaller than the cavity floor")
    b = _Builder()
    hx, hy = sx / 2.0, sy / 2.0
    o_lo = _rect_ring(b, hx, hy, 0.0)
    o_hi = _rect_ring(b, hx, hy, sz)
    i_lo = _rect_ring(b, ix, iy, wall)
    i_hi = _rect_ring(b, ix, iy, sz)
    h_lo = _rect_ring(b, hole_x / 2.0, hole_y / 2.0, 0.0)
    h_hi = _rect_ring(b, hole_x / 2.0, hole_y / 2.0, wall)
    _rect_annulus(b, h_lo, o_lo, up=False)        # bottom frame
    _rect_annulus(b, h_hi, i_lo, up=True)         # floor frame
    _ring_wall(b, h_lo, h_hi, outward=False)      # hole throat
    _ring_wall(b, o_lo, o_hi, outward=True)
    _ring_wall(b, i_lo, i_hi, outward=False)
    _rect_annulus(b, i_hi, o_hi, up=True)         # rim
    return b.mesh(name)


def truncated_cone_shell(r_top: float, r_bottom: float, height: float,
                         wall: float, segments: int,
                         name: str = "cone_shell") -> TriangleMesh:
    """Open-top conical shell with a closed bottom.

    The opening (inner radius r_top) lies in the z=0 plane with its center at
    the origin; the shell extends down to z = -(height + wall). Vertex 0 sits
    at angle 0 on the inner rim, so segment counts divisible by 4 produce the
    same bounding box.
    """
    if segments < 16:
        raise ValueError("need at least 16 segments")
    if min(r_top, r_bottom, height, wall) <= 0:
        raise ValueError("dimensions must be positive")
    b = _Builder()
    ang = 2.0 * np.pi * np.arange(segments) / segments
    ca, sa = np.cos(ang), np.sin(ang)

    def ring(radius: float, z: float) -> list[int]:
        return [b.vertex(radius * ca[k], radius * sa[k], z) for k in range(segments)]

    inner_top = ring(r_top, 0.0)
    inner_bot = ring(r_bottom, -height)
    outer_top = ring(r_top + wall, 0.0)
    outer_bot = ring(r_bottom + wall, -(height + wall))
    c_in = b.vertex(0.0, 0.0, -height)
    c_out = b.vertex(0.0, 0.0, -(height + wall))
    _ring_wall(b, inner_bot, inner_top, outward=False)
    _ring_wall(b, outer_bot, outer_top, outward=True)
    for k in range(segments):
        k2 = (k + 1) % segments
        b.tri(c_in, inner_bot[k], inner_bot[k2])          # cavity floor
        b.tri(c_out, outer_bot[k2], outer_bot[k])         # underside
        b.quad(inner_top[k], outer_top[k], outer_top[k2], inner_top[k2])  # rim
    return b.mesh(name)
