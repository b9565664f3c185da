"""Open-containability scoring by simulated particle drops.

The pipeline rains a grid of particles over the object's bounding box,
shakes the object through a fixed perturbation schedule (small rotations,
horizontal force fields, a final rest), then counts how many particle
centers remain strictly inside the original-pose AABB. The score is

    omega = n_in / n_drop

and the object is called an open container when omega exceeds a threshold
(zero by default: retaining anything at all counts).

Simulation runs in an AABB-anchored frame (mesh translated so the AABB min
corner sits at the origin, ground plane at z=0), which makes the result
independent of where the mesh happens to sit in world coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .errors import DegenerateGeometryError, ScheduleOverflowError
from .geometry import (
    Aabb,
    Footprint,
    RigidTransform,
    TriangleMesh,
    compute_aabb,
    compute_centroid,
)
from .physics import (
    KinematicMotion,
    MeshBody,
    ParticleSpec,
    SimWorld,
    SolverParams,
    apply_force_field,
    build_collision_index,
    drive_kinematic,
)

_AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0])}


@dataclass(frozen=True)
class GridPlan:
    """Drop lattice over the AABB top face."""

    n_x: int
    n_y: int
    n_z: int
    scale_s: float
    positions: np.ndarray
    layer_spacing: float
    base_clearance: float

    def __post_init__(self):
        pts = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        object.__setattr__(self, "positions", pts)
        if len(pts) != self.n_x * self.n_y * self.n_z:
            raise ValueError("position count does not match n_x*n_y*n_z")

    @property
    def n_drop(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class RotatePhase:
    """One rocking cycle about a horizontal axis through the object centroid.

    The angle profile is piecewise linear: ramp 0 to +angle over ramp_steps,
    hold, ramp to -angle, hold, ramp back to exactly 0. Total duration is
    3*ramp_steps + 2*hold_steps and the phase always ends at the start pose.
    """

    axis: str
    angle: float
    ramp_steps: int
    hold_steps: int

    def __post_init__(self):
        if self.axis not in _AXES:
            raise ValueError("axis must be 'x' or 'y'")
        if self.ramp_steps < 1 or self.hold_steps < 0:
            raise ValueError("ramp_steps >= 1 and hold_steps >= 0 required")

    @property
    def duration(self) -> int:
        return 3 * self.ramp_steps + 2 * self.hold_steps

    def angle_profile(self) -> np.ndarray:
        r, h = self.ramp_steps, self.hold_steps
        knots = [0, r, r + h, 2 * r + h, 2 * r + 2 * h, 3 * r + 2 * h]
        vals = [0.0, self.angle, self.angle, -self.angle, -self.angle, 0.0]
        return np.interp(np.arange(self.duration + 1), knots, vals)


@dataclass(frozen=True)
class ForceFieldPhase:
    direction: tuple[float, float, float]
    magnitude: float
    duration_steps: int

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if d.shape != (3,) or not np.linalg.norm(d) > 0:
            raise ValueError("direction must be a nonzero 3-vector")
        if self.magnitude < 0 or self.duration_steps < 0:
            raise ValueError("magnitude and duration must be nonnegative")
        object.__setattr__(self, "direction", tuple(float(x) for x in d))

    @property
    def duration(self) -> int:
        return self.duration_steps

    def accel(self) -> np.ndarray:
        d = np.asarray(self.direction)
        return d / np.linalg.norm(d) * self.magnitude


@dataclass(frozen=True)
class RestPhase:
    duration_steps: int

    def __post_init__(self):
        if self.duration_steps < 0:
            raise ValueError("duration must be nonnegative")

    @property
    def duration(self) -> int:
        return self.duration_steps


Phase = RotatePhase | ForceFieldPhase | RestPhase


@dataclass(frozen=True)
class PerturbationSchedule:
    phases: tuple[Phase, ...]

    def __post_init__(self):
        object.__setattr__(self, "phases", tuple(self.phases))

    @property
    def total_steps(self) -> int:
        return sum(p.duration for p in self.phases)


def default_schedule(config: RunConfig = RunConfig()) -> PerturbationSchedule:
    """Rock about x then y, push the particles along +-x and +-y, then rest."""
    a = config.rotate_angle
    r, h = config.rotate_ramp_steps, config.rotate_hold_steps
    m, fs = config.field_accel, config.field_steps
    return PerturbationSchedule((
        RotatePhase("x", a, r, h),
        RotatePhase("y", a, r, h),
        ForceFieldPhase((1.0, 0.0, 0.0), m, fs),
        ForceFieldPhase((-1.0, 0.0, 0.0), m, fs),
        ForceFieldPhase((0.0, 1.0, 0.0), m, fs),
        ForceFieldPhase((0.0, -1.0, 0.0), m, fs),
        RestPhase(config.final_rest_steps),
    ))


@dataclass(frozen=True)
class ContainabilityResult:
    omega: float
    n_in: int
    n_drop: int
    footprint: Footprint
    is_open_container: bool
    grid: GridPlan
    mesh_name: str = field(default="", compare=False)


# --------------------------------------------------------------------------
# operations

def plan_grid(object_aabb: Aabb, particle: ParticleSpec, n_max: int, n_min: int,
              base_clearance: float = 0.01, layer_spacing: float = 0.05) -> GridPlan:
    """Lay out the drop lattice covering the AABB top face.

    Per-axis counts start at floor(extent / particle diameter), clamped to at
    least 1. If the layer exceeds n_max the counts shrink by sqrt(n_max / n);
    if the original layer falls short of n_min, extra layers stack up to reach
    it. Lattice cells are extent/count wide with particles at cell centers,
    the lowest layer base_clearance above the box, layers layer_spacing apart.
    """
    if n_min > n_max:
        raise ValueError("n_min must not exceed n_max")
    ext = object_aabb.extents
    if ext[0] <= 0.0 or ext[1] <= 0.0:
        raise DegenerateGeometryError(
            "object AABB has zero horizontal extent; cannot place a drop grid")
    l_p = 2.0 * particle.radius
    nx1 = max(1, math.floor(ext[0] / l_p))
    ny1 = max(1, math.floor(ext[1] / l_p))
    scale_s = 1.0
    n_x, n_y = nx1, ny1
    if nx1 * ny1 > n_max:
        scale_s = math.sqrt(n_max / (nx1 * ny1))
        n_x = max(1, math.floor(scale_s * ext[0] / l_p))
        n_y = max(1, math.floor(scale_s * ext[1] / l_p))
    n_z = math.ceil(n_min / (nx1 * ny1)) if nx1 * ny1 < n_min else 1
    xs = object_aabb.min[0] + (np.arange(n_x) + 0.5) * (ext[0] / n_x)
    ys = object_aabb.min[1] + (np.arange(n_y) + 0.5) * (ext[1] / n_y)
    zs = object_aabb.max[2] + base_clearance + np.arange(n_z) * layer_spacing
    gz, gy, gx = np.meshgrid(zs, ys, xs, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return GridPlan(n_x, n_y, n_z, scale_s, pts, layer_spacing, base_clearance)


def run_drop(world: SimWorld, grid: GridPlan, drop_steps: int) -> SimWorld:
    """Spawn the lattice and let it fall with no extra force field."""
    if world.n_particles:
        raise ValueError("drop phase expects a world without particles")
    world.spawn(grid.positions)
    apply_force_field(world, (0.0, 0.0, 0.0))
    return world.run(drop_steps)


def _run_rotation(world: SimWorld, phase: RotatePhase) -> None:
    body = world.object
    if body is None:
        world.run(phase.duration)
        return
    base = body.pose
    center = base.apply(compute_centroid(body.mesh))
    axis = _AXES[phase.axis]
    start = world.step_count
    profile = phase.angle_profile()
    poses = tuple(
        RigidTransform.from_axis_angle(axis, ang, center=center).compose(base)
        for ang in profile)
    motion = KinematicMotion(start + np.arange(phase.duration + 1), poses)
    drive_kinematic(world, motion, target="object")
    world.run(phase.duration)
    world.set_motion("object", None)


def run_perturbations(world: SimWorld, schedule: PerturbationSchedule) -> SimWorld:
    """Execute the phases in order; rotations revert, force fields end zeroed."""
    for phase in schedule.phases:
        if isinstance(phase, RotatePhase):
            _run_rotation(world, phase)
        elif isinstance(phase, ForceFieldPhase):
            apply_force_field(world, phase.accel())
            world.run(phase.duration)
            apply_force_field(world, (0.0, 0.0, 0.0))
        else:
            world.run(phase.duration)
    return world


def retained_mask(world: SimWorld, object_aabb: Aabb) -> np.ndarray:
    return object_aabb.contains_strict(world.positions)


def count_retained(world: SimWorld, object_aabb: Aabb) -> int:
    """Particle centers strictly inside the AABB; resting on top does not count."""
    return int(retained_mask(world, object_aabb).sum())


def imagine_containability(mesh: TriangleMesh, config: RunConfig = RunConfig(),
                           schedule: PerturbationSchedule | None = None,
                           frame_sink=None) -> ContainabilityResult:
    """Full pipeline: plan grid, drop, perturb, count, score.

    The schedule defaults to the standard rock-push-rest sequence; its steps
    plus the drop phase must fit the t_o budget, and any remaining steps are
    spent settling at the end.
    """
    if schedule is None:
        schedule = default_schedule(config)
    total = config.drop_steps + schedule.total_steps
    if total > config.t_o:
        raise ScheduleOverflowError(
            f"drop ({config.drop_steps}) + schedule ({schedule.total_steps}) "
            f"exceeds the budget of {config.t_o} steps")
    if total < config.t_o:
        schedule = PerturbationSchedule(
            schedule.phases + (RestPhase(config.t_o - total),))

    world_aabb = compute_aabb(mesh)
    shift = world_aabb.min.copy()
    local = TriangleMesh(mesh.vertices - shift, mesh.triangles, name=mesh.name)
    aabb = compute_aabb(local)
    index = build_collision_index(local)
    particle = ParticleSpec(radius=config.particle_radius,
                            mass=config.particle_mass,
                            restitution=config.restitution,
                            friction=config.friction_particle)
    world = SimWorld(
        particle,
        dt=config.timestep,
        gravity=(0.0, 0.0, config.gravity_z),
        ground_z=0.0,
        object_body=MeshBody(local, index, RigidTransform.identity()),
        friction_mesh=config.friction_mesh,
        friction_particle=config.friction_particle,
        friction_ground=config.friction_ground,
        solver=SolverParams(iterations=config.solver_iterations,
                            beta=config.solver_beta,
                            slop=config.solver_slop,
                            rest_threshold=config.rest_threshold))
    grid = plan_grid(aabb, particle, config.n_max, config.n_min,
                     config.base_clearance, config.layer_spacing)
    if frame_sink is not None:
        frame_sink(world)
        world.spawn(grid.positions)
        apply_force_field(world, (0.0, 0.0, 0.0))
        world.run(config.drop_steps, sink=frame_sink, stride=config.frame_stride)
    else:
        run_drop(world, grid, config.drop_steps)
    if frame_sink is not None:
        _run_perturbations_sinked(world, schedule, frame_sink, config.frame_stride)
    else:
        run_perturbations(world, schedule)
    mask = retained_mask(world, aabb)
    n_in = int(mask.sum())
    n_drop = grid.n_drop
    omega = n_in / n_drop
    footprint = Footprint(world.drop_positions[mask][:, :2] + shift[:2])
    return ContainabilityResult(
        omega=omega, n_in=n_in, n_drop=n_drop, footprint=footprint,
        is_open_container=omega > config.omega_thr, grid=grid,
        mesh_name=mesh.name)


def _run_perturbations_sinked(world: SimWorld, schedule: PerturbationSchedule,
                              sink, stride: int) -> None:
    # same sequencing as run_perturbations, with frame capture
    for phase in schedule.phases:
        if isinstance(phase, RotatePhase):
            body = world.object
            if body is not None:
                base = body.pose
                center = base.apply(compute_centroid(body.mesh))
                profile = phase.angle_profile()
                poses = tuple(
                    RigidTransform.from_axis_angle(_AXES[phase.axis], a,
                                                   center=center).compose(base)
                    for a in profile)
                motion = KinematicMotion(
                    world.step_count + np.arange(phase.duration + 1), poses)
                drive_kinematic(world, motion, target="object")
            world.run(phase.duration, sink=sink, stride=stride)
            if body is not None:
                world.set_motion("object", None)
        elif isinstance(phase, ForceFieldPhase):
            apply_force_field(world, phase.accel())
            world.run(phase.duration, sink=sink, stride=stride)
            apply_force_field(world, (0.0, 0.0, 0.0))
        else:
            world.run(phase.duration, sink=sink, stride=stride)
