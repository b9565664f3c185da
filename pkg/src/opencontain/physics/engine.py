"""Deterministic fixed-timestep dynamics for spherical particles.

Integration is semi-implicit Euler: gravity and force-field kicks update
velocities, contacts are resolved by sequential impulses (restitution +
Coulomb friction, speculative margins against tunneling), positions are
integrated, then one positional projection pass removes residual penetration.
Iteration order is fixed everywhere, there is no randomness, and the kernels
are nopython with the GIL released, so N worlds stepped on N threads produce
bit-identical results to sequential execution.

Meshes are static or kinematic (pose trajectories); particles never exert
forces on them. Triangle contact is two-sided, which is what makes open
scanned shells usable directly.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..errors import SimulationUnstableError, SpawnOverlapError
from ..geometry import RigidTransform, TriangleMesh
from .bvh import CollisionIndex, _closest_point_triangle, _query_sphere_into

DEFAULT_DT = 1.0 / 240.0
DEFAULT_GRAVITY = (0.0, 0.0, -9.81)

_QUERY_CAP = 512          # max mesh triangles near one particle
_MESH_CONTACT_CAP = 128   # stored mesh contacts per particle per mesh; a
                          # particle over the hub of a triangle fan (cup
                          # floors) is within margin of every fan triangle
_SPEED_LIMIT = 100.0      # m/s; beyond this the state is declared unstable


@dataclass(frozen=True)
class ParticleSpec:
    """Spherical particle: 10 mm diameter, 0.9 g by default."""

    radius: float = 0.005
    mass: float = 0.0009
    restitution: float = 0.1
    friction: float = 0.3

    def __post_init__(self):
        if self.radius <= 0 or self.mass <= 0:
            raise ValueError("radius and mass must be positive")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must be in [0, 1]")
        if self.friction < 0:
            raise ValueError("friction must be nonnegative")


@dataclass(frozen=True)
class SolverParams:
    iterations: int = 4
    beta: float = 0.2             # positional correction fraction per step
    slop: float = 1e-4            # persistent penetration allowance, meters
    rest_threshold: float = 0.08  # approach speed below which restitution is off
    speed_limit: float = _SPEED_LIMIT


@dataclass
class KinematicMotion:
    """Pose trajectory keyframes with lerp/slerp interpolation between them.

    Outside the keyframe range the trajectory clamps to the end poses.
    """

    steps: np.ndarray
    poses: tuple[RigidTransform, ...]
    _slerp: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        s = np.asarray(self.steps, dtype=np.int64).reshape(-1)
        if len(s) == 0:
            raise ValueError("motion needs at least one keyframe")
        if np.any(np.diff(s) <= 0):
            raise ValueError("keyframe steps must be strictly increasing")
        self.steps = s
        self.poses = tuple(self.poses)
        if len(self.poses) != len(s):
            raise ValueError("keyframe step/pose count mismatch")

    @property
    def first_step(self) -> int:
        return int(self.steps[0])

    @property
    def last_step(self) -> int:
        return int(self.steps[-1])

    def sample(self, step: float) -> RigidTransform:
        s = self.steps
        if step <= s[0]:
            return self.poses[0]
        if step >= s[-1]:
            return self.poses[-1]
        hi = bisect_right(s, step)
        lo = hi - 1
        if s[lo] == step:
            return self.poses[lo]
        frac = (step - s[lo]) / (s[hi] - s[lo])
        t = (1.0 - frac) * self.poses[lo].translation + frac * self.poses[hi].translation
        if self._slerp is None:
            from scipy.spatial.transform import Rotation, Slerp

            rots = Rotation.from_matrix(np.stack([p.rotation for p in self.poses]))
            self._slerp = Slerp(s.astype(np.float64), rots)
        r = self._slerp(float(step)).as_matrix()
        return RigidTransform(r, t)


@dataclass
class MeshBody:
    """One mesh in the world: immutable geometry, mutable pose, optional motion."""

    mesh: TriangleMesh
    index: CollisionIndex
    pose: RigidTransform
    motion: KinematicMotion | None = None
    initial_pose: RigidTransform = None  # type: ignore[assignment]

    def __post_init__(self):
        if self.initial_pose is None:
            self.initial_pose = self.pose


# --------------------------------------------------------------------------
# kernels

@njit(cache=True, nogil=True, inline="always")
def _rot_apply(R, x, y, z):
    return (R[0, 0] * x + R[0, 1] * y + R[0, 2] * z,
            R[1, 0] * x + R[1, 1] * y + R[1, 2] * z,
            R[2, 0] * x + R[2, 1] * y + R[2, 2] * z)


@njit(cache=True, nogil=True, inline="always")
def _rot_apply_t(R, x, y, z):
    return (R[0, 0] * x + R[1, 0] * y + R[2, 0] * z,
            R[0, 1] * x + R[1, 1] * y + R[2, 1] * z,
            R[0, 2] * x + R[1, 2] * y + R[2, 2] * z)


@njit(cache=True, nogil=True)
def _add_mesh_contacts(i, kind, pos, vel, radius, keep, dt,
                       nmin, nmax, nleft, nright, mv0, mv1, mv2,
                       rot0, tra0, rot1, tra1, mu_val,
                       qbuf, ncon, cap,
                       ci, cj, ctri, cn, cgap, cvs, cmu, cvnpre, cmeff, mass):
    """Detect contacts between particle i and one kinematic mesh.

    Poses: (rot0, tra0) before the step, (rot1, tra1) after; detection happens
    at the end-of-step pose, surface velocity from the pose difference.
    Returns the updated contact count, or -1 on buffer overflow.
    """
    px, py, pz = pos[i, 0], pos[i, 1], pos[i, 2]
    dx, dy, dz = px - tra1[0], py - tra1[1], pz - tra1[2]
    bx, by, bz = _rot_apply_t(rot1, dx, dy, dz)
    nq = _query_sphere_into(nmin, nmax, nleft, nright, mv0, mv1, mv2,
                            bx, by, bz, radius + keep, qbuf)
    if nq < 0:
        return -1
    added = 0
    for q in range(nq):
        s = qbuf[q]
        qx, qy, qz = _closest_point_triangle(
            bx, by, bz,
            mv0[s, 0], mv0[s, 1], mv0[s, 2],
            mv1[s, 0], mv1[s, 1], mv1[s, 2],
            mv2[s, 0], mv2[s, 1], mv2[s, 2])
        ex, ey, ez = bx - qx, by - qy, bz - qz
        dist = np.sqrt(ex * ex + ey * ey + ez * ez)
        if dist > 1e-12:
            nbx, nby, nbz = ex / dist, ey / dist, ez / dist
        else:
            # center on the surface: fall back to the face normal
            ux, uy, uz = mv1[s, 0] - mv0[s, 0], mv1[s, 1] - mv0[s, 1], mv1[s, 2] - mv0[s, 2]
            wx, wy, wz = mv2[s, 0] - mv0[s, 0], mv2[s, 1] - mv0[s, 1], mv2[s, 2] - mv0[s, 2]
            nbx = uy * wz - uz * wy
            nby = uz * wx - ux * wz
            nbz = ux * wy - uy * wx
            nn = np.sqrt(nbx * nbx + nby * nby + nbz * nbz)
            if nn == 0.0:
                continue
            nbx, nby, nbz = nbx / nn, nby / nn, nbz / nn
        if ncon >= cap or added >= _MESH_CONTACT_CAP:
            return -1
        nwx, nwy, nwz = _rot_apply(rot1, nbx, nby, nbz)
        c1x, c1y, c1z = _rot_apply(rot1, qx, qy, qz)
        c0x, c0y, c0z = _rot_apply(rot0, qx, qy, qz)
        vsx = (c1x + tra1[0] - c0x - tra0[0]) / dt
        vsy = (c1y + tra1[1] - c0y - tra0[1]) / dt
        vsz = (c1z + tra1[2] - c0z - tra0[2]) / dt
        ci[ncon] = i
        cj[ncon] = kind
        ctri[ncon] = s
        cn[ncon, 0] = nwx
        cn[ncon, 1] = nwy
        cn[ncon, 2] = nwz
        cgap[ncon] = dist - radius
        cvs[ncon, 0] = vsx
        cvs[ncon, 1] = vsy
        cvs[ncon, 2] = vsz
        cmu[ncon] = mu_val
        cvnpre[ncon] = ((vel[i, 0] - vsx) * nwx + (vel[i, 1] - vsy) * nwy
                        + (vel[i, 2] - vsz) * nwz)
        cmeff[ncon] = mass
        ncon += 1
        added += 1
    return ncon


@njit(cache=True, nogil=True)
def _run_kernel(pos, vel, radius, mass, gravity, accel_traj, dt, n_steps, ground_z,
                o_active, o_nmin, o_nmax, o_nleft, o_nright, o_v0, o_v1, o_v2,
                o_rot, o_tra, o_disp,
                c_active, c_nmin, c_nmax, c_nleft, c_nright, c_v0, c_v1, c_v2,
                c_rot, c_tra, c_disp,
                e, rest_thresh, mu_mesh, mu_pp, mu_ground,
                iters, beta, slop, speed_limit):
    """Advance n_steps. Returns 0, or a nonzero status on failure:
    1 = non-finite/runaway state, 2 = contact buffer overflow."""
    n = pos.shape[0]
    inv_m = 1.0 / mass
    cap = n * (2 * _MESH_CONTACT_CAP + 16 + 1) + 8
    ci = np.empty(cap, np.int64)
    cj = np.empty(cap, np.int64)
    ctri = np.empty(cap, np.int64)
    cn = np.empty((cap, 3), np.float64)
    cgap = np.empty(cap, np.float64)
    cvs = np.empty((cap, 3), np.float64)
    cmu = np.empty(cap, np.float64)
    cvnpre = np.empty(cap, np.float64)
    cmeff = np.empty(cap, np.float64)
    cjn = np.empty(cap, np.float64)
    cjt = np.empty((cap, 3), np.float64)
    qbuf = np.empty(_QUERY_CAP, np.int64)
    speeds = np.empty(n, np.float64)
    two_r = 2.0 * radius

    for t in range(n_steps):
        ax = gravity[0] + accel_traj[t, 0]
        ay = gravity[1] + accel_traj[t, 1]
        az = gravity[2] + accel_traj[t, 2]
        for i in range(n):
            vel[i, 0] += ax * dt
            vel[i, 1] += ay * dt
            vel[i, 2] += az * dt
            speeds[i] = np.sqrt(vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2)

        # -- contact detection (fixed order: per particle ground, object, cup; then pairs)
        ncon = 0
        for i in range(n):
            keep = speeds[i] * dt + 4.0 * slop
            gap = pos[i, 2] - radius - ground_z
            if gap < keep:
                ci[ncon] = i
                cj[ncon] = -1
                ctri[ncon] = -1
                cn[ncon, 0] = 0.0
                cn[ncon, 1] = 0.0
                cn[ncon, 2] = 1.0
                cgap[ncon] = gap
                cvs[ncon, 0] = 0.0
                cvs[ncon, 1] = 0.0
                cvs[ncon, 2] = 0.0
                cmu[ncon] = mu_ground
                cvnpre[ncon] = vel[i, 2]
                cmeff[ncon] = mass
                ncon += 1
            if o_active:
                ncon = _add_mesh_contacts(
                    i, -2, pos, vel, radius, keep + o_disp[t], dt,
                    o_nmin, o_nmax, o_nleft, o_nright, o_v0, o_v1, o_v2,
                    o_rot[t], o_tra[t], o_rot[t + 1], o_tra[t + 1], mu_mesh,
                    qbuf, ncon, cap, ci, cj, ctri, cn, cgap, cvs, cmu, cvnpre,
                    cmeff, mass)
                if ncon < 0:
                    return 2
            if c_active:
                ncon = _add_mesh_contacts(
                    i, -3, pos, vel, radius, keep + c_disp[t], dt,
                    c_nmin, c_nmax, c_nleft, c_nright, c_v0, c_v1, c_v2,
                    c_rot[t], c_tra[t], c_rot[t + 1], c_tra[t + 1], mu_mesh,
                    qbuf, ncon, cap, ci, cj, ctri, cn, cgap, cvs, cmu, cvnpre,
                    cmeff, mass)
                if ncon < 0:
                    return 2
        for i in range(n):
            for j in range(i + 1, n):
                keep = (speeds[i] + speeds[j]) * dt + 4.0 * slop
                dx = pos[i, 0] - pos[j, 0]
                dy = pos[i, 1] - pos[j, 1]
                dz = pos[i, 2] - pos[j, 2]
                lim = two_r + keep
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < lim * lim:
                    if ncon >= cap:
                        return 2
                    dist = np.sqrt(d2)
                    if dist > 1e-12:
                        nx, ny, nz = dx / dist, dy / dist, dz / dist
                    else:
                        nx, ny, nz = 0.0, 0.0, 1.0
                    ci[ncon] = i
                    cj[ncon] = j
                    ctri[ncon] = -1
                    cn[ncon, 0] = nx
                    cn[ncon, 1] = ny
                    cn[ncon, 2] = nz
                    cgap[ncon] = dist - two_r
                    cvs[ncon, 0] = 0.0
                    cvs[ncon, 1] = 0.0
                    cvs[ncon, 2] = 0.0
                    cmu[ncon] = mu_pp
                    cvnpre[ncon] = ((vel[i, 0] - vel[j, 0]) * nx
                                    + (vel[i, 1] - vel[j, 1]) * ny
                                    + (vel[i, 2] - vel[j, 2]) * nz)
                    cmeff[ncon] = 0.5 * mass
                    ncon += 1

        # -- sequential impulse solve
        for k in range(ncon):
            cjn[k] = 0.0
            cjt[k, 0] = 0.0
            cjt[k, 1] = 0.0
            cjt[k, 2] = 0.0
        for _ in range(iters):
            for k in range(ncon):
                i = ci[k]
                j = cj[k]
                nx, ny, nz = cn[k, 0], cn[k, 1], cn[k, 2]
                if j >= 0:
                    rvx = vel[i, 0] - vel[j, 0]
                    rvy = vel[i, 1] - vel[j, 1]
                    rvz = vel[i, 2] - vel[j, 2]
                else:
                    rvx = vel[i, 0] - cvs[k, 0]
                    rvy = vel[i, 1] - cvs[k, 1]
                    rvz = vel[i, 2] - cvs[k, 2]
                vn = rvx * nx + rvy * ny + rvz * nz
                if cgap[k] > 0.0:
                    vmin = -cgap[k] / dt  # may approach, but not cross
                else:
                    vmin = 0.0
                if cvnpre[k] < -rest_thresh:
                    vr = -e * cvnpre[k]
                    if vr > vmin:
                        vmin = vr
                jn_new = cjn[k] + cmeff[k] * (vmin - vn)
                if jn_new < 0.0:
                    jn_new = 0.0
                dj = jn_new - cjn[k]
                cjn[k] = jn_new
                if dj != 0.0:
                    vel[i, 0] += dj * nx * inv_m
                    vel[i, 1] += dj * ny * inv_m
                    vel[i, 2] += dj * nz * inv_m
                    if j >= 0:
                        vel[j, 0] -= dj * nx * inv_m
                        vel[j, 1] -= dj * ny * inv_m
                        vel[j, 2] -= dj * nz * inv_m
                # Coulomb friction against the accumulated normal impulse
                if j >= 0:
                    rvx = vel[i, 0] - vel[j, 0]
                    rvy = vel[i, 1] - vel[j, 1]
                    rvz = vel[i, 2] - vel[j, 2]
                else:
                    rvx = vel[i, 0] - cvs[k, 0]
                    rvy = vel[i, 1] - cvs[k, 1]
                    rvz = vel[i, 2] - cvs[k, 2]
                vn2 = rvx * nx + rvy * ny + rvz * nz
                tx = rvx - vn2 * nx
                ty = rvy - vn2 * ny
                tz = rvz - vn2 * nz
                jtx = cjt[k, 0] - cmeff[k] * tx
                jty = cjt[k, 1] - cmeff[k] * ty
                jtz = cjt[k, 2] - cmeff[k] * tz
                max_f = cmu[k] * cjn[k]
                jt_norm = np.sqrt(jtx * jtx + jty * jty + jtz * jtz)
                if jt_norm > max_f:
                    scale = max_f / jt_norm if jt_norm > 0.0 else 0.0
                    jtx *= scale
                    jty *= scale
                    jtz *= scale
                dx = jtx - cjt[k, 0]
                dy = jty - cjt[k, 1]
                dz = jtz - cjt[k, 2]
                cjt[k, 0] = jtx
                cjt[k, 1] = jty
                cjt[k, 2] = jtz
                vel[i, 0] += dx * inv_m
                vel[i, 1] += dy * inv_m
                vel[i, 2] += dz * inv_m
                if j >= 0:
                    vel[j, 0] -= dx * inv_m
                    vel[j, 1] -= dy * inv_m
                    vel[j, 2] -= dz * inv_m

        # -- integrate
        for i in range(n):
            pos[i, 0] += vel[i, 0] * dt
            pos[i, 1] += vel[i, 1] * dt
            pos[i, 2] += vel[i, 2] * dt

        # -- positional projection on the detected set (velocities untouched)
        for k in range(ncon):
            i = ci[k]
            j = cj[k]
            if j == -1:
                depth = radius - (pos[i, 2] - ground_z)
                if depth > slop:
                    pos[i, 2] += beta * (depth - slop)
            elif j >= 0:
                dx = pos[i, 0] - pos[j, 0]
                dy = pos[i, 1] - pos[j, 1]
                dz = pos[i, 2] - pos[j, 2]
                dist = np.sqrt(dx * dx + dy * dy + dz * dz)
                depth = two_r - dist
                if depth > slop:
                    if dist > 1e-12:
                        nx, ny, nz = dx / dist, dy / dist, dz / dist
                    else:
                        nx, ny, nz = cn[k, 0], cn[k, 1], cn[k, 2]
                    corr = 0.5 * beta * (depth - slop)
                    pos[i, 0] += corr * nx
                    pos[i, 1] += corr * ny
                    pos[i, 2] += corr * nz
                    pos[j, 0] -= corr * nx
                    pos[j, 1] -= corr * ny
                    pos[j, 2] -= corr * nz
            else:
                if j == -2:
                    rot1 = o_rot[t + 1]
                    tra1 = o_tra[t + 1]
                    w0, w1, w2 = o_v0, o_v1, o_v2
                else:
                    rot1 = c_rot[t + 1]
                    tra1 = c_tra[t + 1]
                    w0, w1, w2 = c_v0, c_v1, c_v2
                s = ctri[k]
                dx, dy, dz = pos[i, 0] - tra1[0], pos[i, 1] - tra1[1], pos[i, 2] - tra1[2]
                bx, by, bz = _rot_apply_t(rot1, dx, dy, dz)
                qx, qy, qz = _closest_point_triangle(
                    bx, by, bz,
                    w0[s, 0], w0[s, 1], w0[s, 2],
                    w1[s, 0], w1[s, 1], w1[s, 2],
                    w2[s, 0], w2[s, 1], w2[s, 2])
                ex, ey, ez = bx - qx, by - qy, bz - qz
                dist = np.sqrt(ex * ex + ey * ey + ez * ez)
                depth = radius - dist
                if depth > slop:
                    if dist > 1e-12:
                        nwx, nwy, nwz = _rot_apply(rot1, ex / dist, ey / dist, ez / dist)
                        # keep the side chosen at detection time
                        if nwx * cn[k, 0] + nwy * cn[k, 1] + nwz * cn[k, 2] < 0.0:
                            nwx, nwy, nwz = -nwx, -nwy, -nwz
                            depth = radius + dist
                    else:
                        nwx, nwy, nwz = cn[k, 0], cn[k, 1], cn[k, 2]
                    corr = beta * (depth - slop)
                    pos[i, 0] += corr * nwx
                    pos[i, 1] += corr * nwy
                    pos[i, 2] += corr * nwz

        # -- sanity: finite state, bounded speeds
        acc = 0.0
        vmax = 0.0
        for i in range(n):
            acc += pos[i, 0] + pos[i, 1] + pos[i, 2]
            sp = np.sqrt(vel[i, 0] ** 2 + vel[i, 1] ** 2 + vel[i, 2] ** 2)
            if sp > vmax:
                vmax = sp
        if not np.isfinite(acc) or vmax > speed_limit:
            return 1
    return 0


# --------------------------------------------------------------------------
# world

_EMPTY3 = np.zeros((1, 3), dtype=np.float64)
_EMPTY_NODES = (np.zeros((1, 3)), np.zeros((1, 3)),
                np.full(1, -1, dtype=np.int64), np.zeros(1, dtype=np.int64))


class SimWorld:
    """Simulation state: particles plus up to two kinematic mesh bodies.

    A world is confined to one execution context; meshes and collision
    indices are immutable and may be shared across worlds.
    """

    def __init__(self, particle: ParticleSpec, *,
                 dt: float = DEFAULT_DT,
                 gravity=DEFAULT_GRAVITY,
                 ground_z: float = 0.0,
                 object_body: MeshBody | None = None,
                 cup_body: MeshBody | None = None,
                 friction_mesh: float = 0.5,
                 friction_particle: float = 0.3,
                 friction_ground: float = 0.5,
                 solver: SolverParams = SolverParams()):
        self.particle = particle
        self.dt = float(dt)
        self.gravity = np.asarray(gravity, dtype=np.float64).reshape(3)
        self.ground_z = float(ground_z)
        self.object = object_body
        self.cup = cup_body
        self.friction_mesh = float(friction_mesh)
        self.friction_particle = float(friction_particle)
        self.friction_ground = float(friction_ground)
        self.solver = solver
        self.extra_accel = np.zeros(3)
        self.step_count = 0
        self.positions = np.zeros((0, 3), dtype=np.float64)
        self.velocities = np.zeros((0, 3), dtype=np.float64)
        self.drop_positions = np.zeros((0, 3), dtype=np.float64)

    @property
    def n_particles(self) -> int:
        return len(self.positions)

    def body(self, target: str) -> MeshBody:
        b = {"object": self.object, "cup": self.cup}.get(target)
        if b is None:
            raise ValueError(f"world has no body {target!r}")
        return b

    def spawn(self, positions) -> "SimWorld":
        pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        if len(pts):
            all_pts = np.vstack([self.positions, pts])
            d2 = ((all_pts[None, :, :] - all_pts[:, None, :]) ** 2).sum(axis=2)
            np.fill_diagonal(d2, np.inf)
            min_sep = (2.0 * self.particle.radius) ** 2 * (1.0 - 1e-9)
            if d2.min() < min_sep:
                raise SpawnOverlapError(
                    f"spawn positions closer than one particle diameter "
                    f"(min separation {np.sqrt(d2.min()):.6f} m)")
            self.positions = np.ascontiguousarray(np.vstack([self.positions, pts]))
            self.velocities = np.ascontiguousarray(
                np.vstack([self.velocities, np.zeros_like(pts)]))
            self.drop_positions = np.ascontiguousarray(
                np.vstack([self.drop_positions, pts]))
        return self

    def set_motion(self, target: str, motion: KinematicMotion | None) -> "SimWorld":
        body = self.body(target)
        if motion is not None and motion.first_step < self.step_count:
            raise ValueError(
                f"motion keyframes start at step {motion.first_step}, "
                f"world is already at {self.step_count}")
        body.motion = motion
        return self

    def _trajectory(self, body: MeshBody | None, n_steps: int):
        if body is None:
            return False, _EMPTY_NODES, (_EMPTY3, _EMPTY3, _EMPTY3), \
                np.zeros((n_steps + 1, 3, 3)), np.zeros((n_steps + 1, 3)), \
                np.zeros(n_steps)
        idx = body.index
        nodes = (idx.node_min, idx.node_max, idx.node_left, idx.node_right)
        tris = (idx.v0, idx.v1, idx.v2)
        rot = np.empty((n_steps + 1, 3, 3))
        tra = np.empty((n_steps + 1, 3))
        if body.motion is None:
            rot[:] = body.pose.rotation
            tra[:] = body.pose.translation
            disp = np.zeros(n_steps)
        else:
            for k in range(n_steps + 1):
                p = body.motion.sample(self.step_count + k)
                rot[k] = p.rotation
                tra[k] = p.translation
            dt_norm = np.linalg.norm(np.diff(tra, axis=0), axis=1)
            rel = np.einsum("kij,kil->kjl", rot[:-1], rot[1:])
            cosang = np.clip((np.trace(rel, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
            disp = dt_norm + np.arccos(cosang) * idx.body_radius
        return True, nodes, tris, np.ascontiguousarray(rot), \
            np.ascontiguousarray(tra), np.ascontiguousarray(disp)

    def run(self, n_steps: int, sink=None, stride: int = 1) -> "SimWorld":
        """Advance n_steps. With a sink, emit world snapshots every stride steps."""
        if n_steps < 0:
            raise ValueError("n_steps must be nonnegative")
        if sink is not None:
            done = 0
            while done < n_steps:
                chunk = min(stride, n_steps - done)
                self._run(chunk)
                sink(self)
                done += chunk
            return self
        return self._run(n_steps)

    def _run(self, n_steps: int) -> "SimWorld":
        if n_steps == 0:
            return self
        o_active, o_nodes, o_tris, o_rot, o_tra, o_disp = self._trajectory(self.object, n_steps)
        c_active, c_nodes, c_tris, c_rot, c_tra, c_disp = self._trajectory(self.cup, n_steps)
        accel_traj = np.ascontiguousarray(np.tile(self.extra_accel, (n_steps, 1)))
        sol = self.solver
        status = _run_kernel(
            self.positions, self.velocities,
            self.particle.radius, self.particle.mass,
            self.gravity, accel_traj, self.dt, n_steps, self.ground_z,
            o_active, *o_nodes, *o_tris, o_rot, o_tra, o_disp,
            c_active, *c_nodes, *c_tris, c_rot, c_tra, c_disp,
            self.particle.restitution, sol.rest_threshold,
            self.friction_mesh, self.friction_particle, self.friction_ground,
            sol.iterations, sol.beta, sol.slop, sol.speed_limit)
        if status != 0:
            reason = {1: "non-finite or runaway particle state",
                      2: "contact buffer overflow"}.get(status, f"status {status}")
            raise SimulationUnstableError(
                f"simulation aborted near step {self.step_count}: {reason}")
        self.step_count += n_steps
        if self.object is not None:
            self.object.pose = RigidTransform(o_rot[-1], o_tra[-1])
        if self.cup is not None:
            self.cup.pose = RigidTransform(c_rot[-1], c_tra[-1])
        return self

    def kinetic_energy(self) -> float:
        return float(0.5 * self.particle.mass * (self.velocities ** 2).sum())

    def max_speed(self) -> float:
        if self.n_particles == 0:
            return 0.0
        return float(np.linalg.norm(self.velocities, axis=1).max())


# --------------------------------------------------------------------------
# module-level operations (the public verbs; they mutate and return the world)

def spawn_particles(world: SimWorld, positions) -> SimWorld:
    return world.spawn(positions)


def step(world: SimWorld) -> SimWorld:
    return world.run(1)


def apply_force_field(world: SimWorld, accel) -> SimWorld:
    a = np.asarray(accel, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError("force-field acceleration must be finite")
    world.extra_accel = a
    return world


def drive_kinematic(world: SimWorld, motion: KinematicMotion,
                    target: str = "object") -> SimWorld:
    return world.set_motion(target, motion)


def is_settled(world: SimWorld, v_eps: float) -> bool:
    return world.max_speed() < v_eps
