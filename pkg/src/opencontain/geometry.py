"""Mesh ingestion, rigid transforms, and footprint statistics.

Conventions used throughout the package: the world frame is z-up, all lengths
are meters, and a pose maps body coordinates into world coordinates as
``x_w = R @ x_b + t``. Meshes are plain indexed triangle soups; nothing here
assumes watertightness, so partial scans and open shells are first-class
inputs.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, EmptyMeshError, MeshParseError

log = logging.getLogger(__name__)

# Twice-area below this norm counts as a degenerate (zero-area) triangle.
_AREA_EPS = 1e-12

_ORTHO_TOL = 1e-9


def _as_readonly(a: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(a, dtype=dtype)
    if out is a:
        out = out.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle soup in body coordinates.

    ``dropped_degenerate`` records how many input triangles were removed by
    the loader's cleaning pass; it carries no geometric meaning.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    name: str = ""
    dropped_degenerate: int = field(default=0, compare=False)

    def __post_init__(self):
        v = _as_readonly(np.atleast_2d(self.vertices), np.float64)
        t = _as_readonly(np.atleast_2d(self.triangles), np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (n, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"triangles must be (m, 3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite vertex coordinates")
        if t.size:
            if t.min() < 0 or t.max() >= len(v):
                raise ValueError("triangle index out of range")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ValueError("triangle with repeated vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-triangle corner arrays (m,3) each."""
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: orthonormal rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_readonly(self.rotation, np.float64)
        t = _as_readonly(np.asarray(self.translation).reshape(3), np.float64)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-8:
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-8:
            raise ValueError("rotation determinant is not +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle: float, center=None) -> "RigidTransform":
        """Rotation by ``angle`` about ``axis`` through ``center`` (world origin if None)."""
        a = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(a)
        if n == 0.0:
            raise ValueError("zero rotation axis")
        a = a / n
        c, s = np.cos(angle), np.sin(angle)
        k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        r = np.eye(3) + s * k + (1.0 - c) * (k @ k)
        if center is None:
            return RigidTransform(r, np.zeros(3))
        cen = np.asarray(center, dtype=np.float64).reshape(3)
        return RigidTransform(r, cen - r @ cen)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Transform one point (3,) or a stack (n,3) into world coordinates."""
        p = np.asarray(points, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def is_close(self, other: "RigidTransform", tol: float = 1e-9) -> bool:
        return (
            np.abs(self.rotation - other.rotation).max() <= tol
            and np.abs(self.translation - other.translation).max() <= tol
        )


@dataclass(frozen=True)
class Aabb:
    """Axis-aligned bounding box, min ≤ max componentwise."""

    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _as_readonly(np.asarray(self.min).reshape(3), np.float64)
        hi = _as_readonly(np.asarray(self.max).reshape(3), np.float64)
        if np.any(lo > hi):
            raise ValueError("aabb min exceeds max")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extents(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def contains_strict(self, points: np.ndarray) -> np.ndarray:
        """Boolean mask: strictly interior points (boundary excluded)."""
        p = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.all((p > self.min) & (p < self.max), axis=1)


@dataclass(frozen=True)
class Footprint:
    """xy-projections of the initial drop positions of retained particles."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "points", _as_readonly(p, np.float64))

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class PlaneFrame:
    """Horizontal pour plane: origin, principal axes, and height z_e."""

    origin2d: np.ndarray
    axis_x: np.ndarray
    axis_y: np.ndarray
    z_e: float

    def __post_init__(self):
        o = _as_readonly(np.asarray(self.origin2d).reshape(2), np.float64)
        ax = _as_readonly(np.asarray(self.axis_x).reshape(2), np.float64)
        ay = _as_readonly(np.asarray(self.axis_y).reshape(2), np.float64)
        for a in (ax, ay):
            if abs(np.linalg.norm(a) - 1.0) > _ORTHO_TOL:
                raise ValueError("frame axis is not unit length")
        if abs(float(ax @ ay)) > _ORTHO_TOL:
            raise ValueError("frame axes are not orthogonal")
        object.__setattr__(self, "origin2d", o)
        object.__setattr__(self, "axis_x", ax)
        object.__setattr__(self, "axis_y", ay)
        object.__setattr__(self, "z_e", float(self.z_e))

    @property
    def yaw(self) -> float:
        """World heading of axis_x, radians."""
        return float(np.arctan2(self.axis_x[1], self.axis_x[0]))

    def to_world2d(self, p) -> np.ndarray:
        """Map plane coordinates to world xy."""
        p = np.asarray(p, dtype=np.float64)
        return self.origin2d + p[0] * self.axis_x + p[1] * self.axis_y

    def to_world3d(self, p) -> np.ndarray:
        xy = self.to_world2d(p)
        return np.array([xy[0], xy[1], self.z_e])


# ---------------------------------------------------------------------------
# mesh loading

def clean_triangles(vertices: np.ndarray, triangles: np.ndarray) -> tuple[np.ndarray, int]:
    """Drop triangles with repeated indices or (near-)zero area.

    Returns the kept triangles and the dropped count.
    """
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(t) == 0:
        return t, 0
    repeated = (t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])
    v = np.asarray(vertices, dtype=np.float64)
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    twice_area = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    bad = repeated | (twice_area < _AREA_EPS)
    dropped = int(bad.sum())
    return t[~bad], dropped


def _parse_obj(path: Path) -> tuple[np.ndarray, np.ndarray]:
    verts: list[tuple[float, float, float]] = []
    tris: list[tuple[int, int, int]] = []
    with open(path, "r", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            tag = fields[0]
            if tag == "v":
                if len(fields) < 4:
                    raise MeshParseError(path, f"line {lineno}", "vertex needs 3 coordinates")
                try:
                    verts.append((float(fields[1]), float(fields[2]), float(fields[3])))
                except ValueError as exc:
                    raise MeshParseError(path, f"line {lineno}", f"bad vertex coordinate: {exc}") from None
            elif tag == "f":
                if len(fields) < 4:
                    raise MeshParseError(path, f"line {lineno}", "face needs at least 3 indices")
                idx = []
                for part in fields[1:]:
                    head = part.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise MeshParseError(path, f"line {lineno}", f"bad face index {part!r}") from None
                    if i < 1:
                        raise MeshParseError(path, f"line {lineno}", f"face index {i} is not 1-based positive")
                    if i > len(verts):
                        raise MeshParseError(path, f"line {lineno}", f"face index {i} exceeds vertex count {len(verts)}")
                    idx.append(i - 1)
                for k in range(1, len(idx) - 1):  # fan triangulation
                    tris.append((idx[0], idx[k], idx[k + 1]))
            # all other records (vn, vt, o, g, usemtl, s, mtllib, ...) are ignored
    return (
        np.array(verts, dtype=np.float64).reshape(-1, 3),
        np.array(tris, dtype=np.int64).reshape(-1, 3),
    )


_PLY_SCALAR = {
    "char": "b", "int8": "b",
    "uchar": "B", "uint8": "B",
    "short": "h", "int16": "h",
    "ushort": "H", "uint16": "H",
    "int": "i", "int32": "i",
    "uint": "I", "uint32": "I",
    "float": "f", "float32": "f",
    "double": "d", "float64": "d",
}


def _parse_ply(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()

    # header is ASCII lines terminated by "end_header"
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError(path, "offset 0", "not a PLY file (missing magic or end_header)")
    nl = data.find(b"\n", end)
    if nl < 0:
        raise MeshParseError(path, f"offset {end}", "truncated header")
    body_off = nl + 1
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[tuple[str, int, list[tuple]]] = []  # (name, count, props)
    for lineno, line in enumerate(header_lines, start=1):
        fields = line.strip().split()
        if not fields or fields[0] in ("ply", "comment", "obj_info"):
            continue
        if fields[0] == "format":
            if len(fields) < 2 or fields[1] not in ("ascii", "binary_little_endian"):
                raise MeshParseError(path, f"line {lineno}", f"unsupported PLY format {fields[1:]!r}")
            fmt = fields[1]
        elif fields[0] == "element":
            if len(fields) != 3:
                raise MeshParseError(path, f"line {lineno}", "malformed element line")
            try:
                elements.append((fields[1], int(fields[2]), []))
            except ValueError:
                raise MeshParseError(path, f"line {lineno}", "bad element count") from None
        elif fields[0] == "property":
            if not elements:
                raise MeshParseError(path, f"line {lineno}", "property before any element")
            if fields[1] == "list":
                if len(fields) != 5:
                    raise MeshParseError(path, f"line {lineno}", "malformed list property")
                ct, it = fields[2], fields[3]
                if ct not in _PLY_SCALAR or it not in _PLY_SCALAR:
                    raise MeshParseError(path, f"line {lineno}", f"unsupported list types {ct}/{it}")
                elements[-1][2].append(("list", ct, it, fields[4]))
            else:
                if len(fields) != 3 or fields[1] not in _PLY_SCALAR:
                    raise MeshParseError(path, f"line {lineno}", f"unsupported property {fields[1]!r}")
                elements[-1][2].append(("scalar", fields[1], fields[2]))
    if fmt is None:
        raise MeshParseError(path, "header", "missing format line")

    verts = np.zeros((0, 3), dtype=np.float64)
    tris: list[tuple[int, int, int]] = []

    if fmt == "ascii":
        tokens = data[body_off:].decode("ascii", errors="replace").split()
        pos = 0

        def take(n: int, where: str) -> list[str]:
            nonlocal pos
            if pos + n > len(tokens):
                raise MeshParseError(path, where, "unexpected end of data")
            out = tokens[pos:pos + n]
            pos += n
            return out

        for name, count, props in elements:
            if name == "vertex":
                rows = np.zeros((count, 3), dtype=np.float64)
                cols = {p[2]: k for k, p in enumerate(props) if p[0] == "scalar"}
                for ax in ("x", "y", "z"):
                    if ax not in cols:
                        raise MeshParseError(path, "header", f"vertex element lacks property {ax}")
                for i in range(count):
                    vals = take(len(props), f"vertex {i}")
                    try:
                        rows[i] = [float(vals[cols["x"]]), float(vals[cols["y"]]), float(vals[cols["z"]])]
                    except ValueError as exc:
                        raise MeshParseError(path, f"vertex {i}", f"bad coordinate: {exc}") from None
                verts = rows
            else:
                is_face = name == "face"
                for i in range(count):
                    row_idx: list[int] | None = None
                    for p in props:
                        if p[0] == "list":
                            n = int(take(1, f"{name} {i}")[0])
                            vals = take(n, f"{name} {i}")
                            if is_face and p[3] in ("vertex_indices", "vertex_index"):
                                row_idx = [int(v) for v in vals]
                        else:
                            take(1, f"{name} {i}")
                    if is_face and row_idx is not None:
                        if len(row_idx) < 3:
                            raise MeshParseError(path, f"face {i}", "face with fewer than 3 indices")
                        for k in range(1, len(row_idx) - 1):
                            tris.append((row_idx[0], row_idx[k], row_idx[k + 1]))
    else:
        off = body_off

        def unpack(code: str, where: str):
            nonlocal off
            size = struct.calcsize("<" + code)
            if off + size > len(data):
                raise MeshParseError(path, where, "unexpected end of binary data")
            out = struct.unpack_from("<" + code, data, off)[0]
            off += size
            return out

        for name, count, props in elements:
            if name == "vertex":
                rows = np.zeros((count, 3), dtype=np.float64)
                for i in range(count):
                    vals = {}
                    for p in props:
                        if p[0] != "scalar":
                            raise MeshParseError(path, f"offset {off}", "list property on vertex element")
                        vals[p[2]] = unpack(_PLY_SCALAR[p[1]], f"offset {off}")
                    try:
                        rows[i] = [vals["x"], vals["y"], vals["z"]]
                    except KeyError as exc:
                        raise MeshParseError(path, "header", f"vertex element lacks property {exc}") from None
                verts = rows
            else:
                is_face = name == "face"
                for i in range(count):
                    row_idx = None
                    for p in props:
                        if p[0] == "list":
                            n = int(unpack(_PLY_SCALAR[p[1]], f"offset {off}"))
                            vals = [int(unpack(_PLY_SCALAR[p[2]], f"offset {off}")) for _ in range(n)]
                            if is_face and p[3] in ("vertex_indices", "vertex_index"):
                                row_idx = vals
                        else:
                            unpack(_PLY_SCALAR[p[1]], f"offset {off}")
                    if is_face and row_idx is not None:
                        if len(row_idx) < 3:
                            raise MeshParseError(path, f"offset {off}", "face with fewer than 3 indices")
                        for k in range(1, len(row_idx) - 1):
                            tris.append((row_idx[0], row_idx[k], row_idx[k + 1]))

    t = np.array(tris, dtype=np.int64).reshape(-1, 3)
    if t.size and (t.min() < 0 or t.max() >= len(verts)):
        raise MeshParseError(path, "faces", "face index out of vertex range")
    return verts, t


def load_mesh(path, scale: float = 1.0, name: str | None = None) -> TriangleMesh:
    """Load an OBJ or PLY mesh, clean degenerate triangles, optionally rescale.

    Raises FileNotFoundError, MeshParseError (with line/offset context), or
    EmptyMeshError when no valid triangle survives cleaning.
    """
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"mesh file not found: {p}")
    suffix = p.suffix.lower()
    if suffix == ".obj":
        verts, tris = _parse_obj(p)
    elif suffix == ".ply":
        verts, tris = _parse_ply(p)
    else:
        raise MeshParseError(p, "extension", f"unsupported mesh format {suffix!r} (expected .obj or .ply)")
    if scale != 1.0:
        verts = verts * float(scale)
    tris, dropped = clean_triangles(verts, tris)
    if dropped:
        log.warning("%s: dropped %d degenerate triangle(s)", p, dropped)
    if len(tris) == 0:
        raise EmptyMeshError(f"{p}: no valid triangles after cleaning")
    return TriangleMesh(verts, tris, name=name if name is not None else p.stem,
                        dropped_degenerate=dropped)


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write a mesh as ASCII OBJ (used for synthetic fixtures and exports).

    Coordinates use the shortest decimal form that parses back to the same
    double, so a save/load round trip is lossless.
    """
    p = Path(path)
    with open(p, "w") as fh:
        fh.write(f"# {mesh.name or 'mesh'}\n")
        for v in mesh.vertices:
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------------------
# derived quantities

def compute_aabb(mesh: TriangleMesh, pose: RigidTransform | None = None) -> Aabb:
    """Tightest axis-aligned box around the posed mesh vertices."""
    if mesh.n_vertices == 0:
        raise EmptyMeshError("cannot bound an empty mesh")
    v = mesh.vertices if pose is None else pose.apply(mesh.vertices)
    return Aabb(v.min(axis=0), v.max(axis=0))


def compute_centroid(mesh: TriangleMesh) -> np.ndarray:
    """Area-weighted surface centroid; the body-frame origin for pose math.

    Partial scans are open shells, so a volumetric center of mass is
    ill-defined; the surface centroid is well-defined for any triangle soup.
    """
    a, b, c = mesh.corners()
    twice_area = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    total = twice_area.sum()
    if total < _AREA_EPS:
        raise DegenerateGeometryError("mesh has zero total surface area")
    centers = (a + b + c) / 3.0
    return (centers * twice_area[:, None]).sum(axis=0) / total


def rotate2d(theta: float) -> np.ndarray:
    """Counterclockwise rotation matrix in the plane."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


_EIG_GAP_TOL = 1e-9


def footprint_frame(footprint: Footprint, object_aabb: Aabb,
                    clearance: float = 0.01) -> PlaneFrame:
    """Pour-plane frame from the retained-particle footprint.

    Origin is the footprint mean; axes are the principal directions of the
    2x2 point covariance with axis_x on the larger eigenvalue. Degenerate
    covariance (single point or eigenvalue gap < 1e-9) falls back to world
    x/y so the frame is always deterministic. The plane sits ``clearance``
    above the object AABB top.
    """
    pts = footprint.points
    if len(pts) == 0:
        raise DegenerateGeometryError("empty footprint has no frame")
    mean = pts.mean(axis=0)
    centered = pts - mean
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)  # ascending
    if evals[1] - evals[0] < _EIG_GAP_TOL:
        ax = np.array([1.0, 0.0])
    else:
        ax = evecs[:, 1]
        # eigenvector sign is arbitrary; pin it lexicographically
        if ax[0] < 0.0 or (ax[0] == 0.0 and ax[1] < 0.0):
            ax = -ax
        ax = ax / np.linalg.norm(ax)
    ay = np.array([-ax[1], ax[0]])  # right-handed, exactly orthonormal
    return PlaneFrame(mean, ax, ay, float(object_aabb.max[2]) + clearance)
