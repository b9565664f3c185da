"""Pouring imagination: sweep cup poses above a container, score each pour.

Given a containability result, a horizontal plane E is placed one
centimeter above the object AABB, anchored at the retained-particle
footprint centroid with axes along the footprint's principal directions.
A cup is tilted so one rim point (the pivot) rests on E with the slant
line through it lying in E, pointed at the footprint centroid. Eight
approach angles times three indentation distances give 24 candidate
pivots; each pour fills the cup, rotates it about the rim tangent through
the pivot, and counts the particles the object retains. The best cell of
the 8x3 score table selects the pour the caller should execute.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .containability import ContainabilityResult, count_retained
from .errors import CupFillError, NotAContainerError
from .geometry import (
    Aabb,
    PlaneFrame,
    RigidTransform,
    TriangleMesh,
    compute_aabb,
    footprint_frame,
    rotate2d,
)
from .meshgen import truncated_cone_shell
from .physics import (
    CollisionIndex,
    KinematicMotion,
    MeshBody,
    ParticleSpec,
    SimWorld,
    SolverParams,
    build_collision_index,
    drive_kinematic,
    meshes_overlap,
)

N_THETA = 8
N_INDENT = 3


@dataclass(frozen=True)
class CupSpec:
    """Truncated-cone pouring cup; diameters and height are inner dimensions."""

    mouth_inner_diameter: float = 0.08
    bottom_inner_diameter: float = 0.06
    inner_height: float = 0.10
    wall_thickness: float = 0.003
    tessellation_segments: int = 64

    def __post_init__(self):
        if not self.mouth_inner_diameter >= self.bottom_inner_diameter > 0:
            raise ValueError("need mouth >= bottom > 0")
        if self.inner_height <= 0 or self.wall_thickness <= 0:
            raise ValueError("height and wall must be positive")
        if self.tessellation_segments < 16:
            raise ValueError("need at least 16 segments")

    @property
    def mouth_radius(self) -> float:
        return self.mouth_inner_diameter / 2.0

    @property
    def bottom_radius(self) -> float:
        return self.bottom_inner_diameter / 2.0

    @property
    def slant_angle(self) -> float:
        """Angle between the cup axis and the inner wall slant line."""
        return math.atan2(self.mouth_radius - self.bottom_radius,
                          self.inner_height)

    @property
    def slant_length(self) -> float:
        return math.hypot(self.mouth_radius - self.bottom_radius,
                          self.inner_height)

    @classmethod
    def from_config(cls, config: RunConfig) -> "CupSpec":
        return cls(config.cup_mouth_diameter, config.cup_bottom_diameter,
                   config.cup_height, config.cup_wall, config.cup_segments)


def build_cup(spec: CupSpec) -> tuple[TriangleMesh, np.ndarray]:
    """Cup mesh in its body frame (mouth plane z=0, axis +z, opening up) and
    the pivot rim point on the body -x side."""
    mesh = truncated_cone_shell(spec.mouth_radius, spec.bottom_radius,
                                spec.inner_height, spec.wall_thickness,
                                spec.tessellation_segments, name="cup")
    pivot = np.array([-spec.mouth_radius, 0.0, 0.0])
    return mesh, pivot


@dataclass(frozen=True)
class PourConfig:
    theta_index: int
    indent_index: int
    theta_pour: float
    p_pour: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_pour, dtype=np.float64).reshape(2)
        object.__setattr__(self, "p_pour", p)
        if not 0 <= self.theta_index < N_THETA:
            raise ValueError("theta_index out of range")
        if not 0 <= self.indent_index < N_INDENT:
            raise ValueError("indent_index out of range")


def enumerate_pour_configs(frame: PlaneFrame, object_aabb: Aabb,
                           l_0: float = 0.01) -> list[PourConfig]:
    """The 24 (theta, indentation) candidates, pivot positions in E coords.

    Indentation step is one third of the AABB top-face diagonal; approach
    angles are the eight multiples of pi/4.
    """
    ext = object_aabb.extents
    delta_l = math.hypot(ext[0], ext[1]) / 3.0
    configs = []
    for i in range(N_THETA):
        theta = i * math.pi / 4.0
        rot = rotate2d(theta)
        for j in range(N_INDENT):
            l_idt = l_0 + j * delta_l
            p = rot @ np.array([l_idt, 0.0])
            configs.append(PourConfig(i, j, theta, p))
    return configs


def cup_initial_pose(config: PourConfig, frame: PlaneFrame, pivot_body,
                     slant_angle: float = 0.0) -> RigidTransform:
    """Pose placing the cup pivot on plane E at the config's pivot point.

    The cup is rolled about the world y axis by (slant_angle - pi/2), which
    lays the inner-wall slant line through the pivot horizontally with the
    mouth facing the approach direction's origin and the pivot as the lowest
    rim point, then yawed by the approach angle within the frame. Choosing
    slant_angle = 0 treats the cup as a cylinder; pass CupSpec.slant_angle
    for the true cone geometry.
    """
    pivot_body = np.asarray(pivot_body, dtype=np.float64).reshape(3)
    yaw = frame.yaw + config.theta_pour
    r_0 = RigidTransform.from_axis_angle((0.0, 1.0, 0.0),
                                         slant_angle - math.pi / 2.0).rotation
    r_init = RigidTransform.from_axis_angle((0.0, 0.0, 1.0), yaw).rotation @ r_0
    target = frame.to_world3d(config.p_pour)
    t_init = target - r_init @ pivot_body
    return RigidTransform(r_init, t_init)


def pour_axis(config: PourConfig, frame: PlaneFrame) -> np.ndarray:
    """Rotation axis of the pour: horizontal rim tangent at the pivot."""
    a = frame.yaw + config.theta_pour
    return np.array([-math.sin(a), math.cos(a), 0.0])


def pour_motion(init_pose: RigidTransform, pivot_world: np.ndarray,
                axis_world: np.ndarray, gamma0: float, ramp_steps: int,
                total_steps: int, start_step: int) -> KinematicMotion:
    """Per-step keyframes rotating the cup about the fixed pivot.

    The tilt angle grows linearly to gamma0 over ramp_steps, then holds for
    the remainder so the last particles can leave the cup. Dense keyframes
    keep the pivot exactly stationary at every step.
    """
    if ramp_steps > total_steps:
        raise ValueError("ramp does not fit in the pour budget")
    ks = np.arange(total_steps + 1)
    gammas = gamma0 * np.minimum(ks, ramp_steps) / ramp_steps
    poses = tuple(
        RigidTransform.from_axis_angle(axis_world, -g, center=pivot_world)
        .compose(init_pose)
        for g in gammas)
    return KinematicMotion(start_step + ks, poses)


def cup_fill_lattice(spec: CupSpec, n_pour: int, particle_radius: float,
                     lip_margin: float = 0.015) -> np.ndarray:
    """Particle start positions, in cup body coordinates, for the tilted cup.

    At the initial pose the inner-wall strip through the pivot is horizontal,
    so particles are stacked in layers over that strip: along the slant (u,
    away from the mouth lip), across it (v), and perpendicular to the wall
    (w). Candidates violating the inner cone clearance are discarded. Raises
    when the cup cannot host n_pour particles.
    """
    r = particle_radius
    r_m, r_b, h = spec.mouth_radius, spec.bottom_radius, spec.inner_height
    d_len = spec.slant_length
    lip = np.array([-r_m, 0.0, 0.0])
    slant = np.array([r_m - r_b, 0.0, -h]) / d_len
    inward = np.array([h, 0.0, r_m - r_b]) / d_len
    lateral = np.array([0.0, 1.0, 0.0])
    pitch = 2.0 * r + 0.0005
    clearance = r + 2e-4

    us = np.arange(lip_margin, d_len - r, pitch)
    n_lat = int(r_m // pitch) + 1
    vs = [0.0]
    for k in range(1, n_lat + 1):
        vs.extend((-k * pitch, k * pitch))
    out = []
    w = r + 0.001
    while len(out) < n_pour:
        layer_had_room = False
        for u in us:
            for v in vs:
                c = lip + u * slant + w * inward + v * lateral
                depth = -c[2]
                if depth < 0.0 or h - depth < clearance:
                    continue
                r_in = r_m + (r_b - r_m) * (depth / h)
                rho = math.hypot(c[0], c[1])
                if (r_in - rho) * (h / d_len) < clearance:
                    continue
                layer_had_room = True
                out.append(c)
                if len(out) == n_pour:
                    return np.array(out)
        if not layer_had_room:
            raise CupFillError(
                f"cup holds only {len(out)} of {n_pour} particles "
                f"(radius {r} m)")
        w += pitch
    return np.array(out)


@dataclass(frozen=True)
class PourInputs:
    """Immutable context shared by the 24 pour simulations."""

    object_mesh: TriangleMesh
    object_index: CollisionIndex
    object_aabb: Aabb
    frame: PlaneFrame
    cup_spec: CupSpec
    cup_mesh: TriangleMesh
    cup_index: CollisionIndex
    pivot_body: np.ndarray
    config: RunConfig


def _make_world(inputs: PourInputs) -> SimWorld:
    cfg = inputs.config
    particle = ParticleSpec(radius=cfg.particle_radius, mass=cfg.particle_mass,
                            restitution=cfg.restitution,
                            friction=cfg.friction_particle)
    return SimWorld(
        particle,
        dt=cfg.timestep,
        gravity=(0.0, 0.0, cfg.gravity_z),
        ground_z=float(inputs.object_aabb.min[2]),
        object_body=MeshBody(inputs.object_mesh, inputs.object_index,
                             RigidTransform.identity()),
        friction_mesh=cfg.friction_mesh,
        friction_particle=cfg.friction_particle,
        friction_ground=cfg.friction_ground,
        solver=SolverParams(iterations=cfg.solver_iterations,
                            beta=cfg.solver_beta, slop=cfg.solver_slop,
                            rest_threshold=cfg.rest_threshold))


def simulate_pour(world: SimWorld, config: PourConfig, inputs: PourInputs,
                  frame_sink=None) -> float:
    """One pour: place cup, fill, settle, tip by gamma0, score retention.

    An initial pose whose cup intersects the object marks the configuration
    infeasible and scores 0 without simulating.
    """
    cfg = inputs.config
    init_pose = cup_initial_pose(config, inputs.frame, inputs.pivot_body,
                                 inputs.cup_spec.slant_angle)
    if meshes_overlap(inputs.object_index, world.object.pose,
                      inputs.cup_index, init_pose):
        return 0.0
    world.cup = MeshBody(inputs.cup_mesh, inputs.cup_index, init_pose)
    fill = cup_fill_lattice(inputs.cup_spec, cfg.n_pour, cfg.particle_radius)
    world.spawn(init_pose.apply(fill))
    stride = cfg.frame_stride
    if frame_sink is not None:
        frame_sink(world)
    world.run(cfg.prefill_settle_steps, sink=frame_sink, stride=stride)
    pivot_world = init_pose.apply(inputs.pivot_body)
    axis_world = pour_axis(config, inputs.frame)
    motion = pour_motion(init_pose, pivot_world, axis_world, cfg.gamma0,
                         cfg.pour_ramp_steps, cfg.t_p, world.step_count)
    drive_kinematic(world, motion, target="cup")
    world.run(cfg.t_p, sink=frame_sink, stride=stride)
    return count_retained(world, inputs.object_aabb) / cfg.n_pour


def select_best(table) -> tuple[int, int]:
    """Best row by total score, then best cell in that row; earliest on ties."""
    t = np.asarray(table, dtype=np.float64)
    if t.shape != (N_THETA, N_INDENT):
        raise ValueError(f"expected an {N_THETA}x{N_INDENT} table")
    i_star = int(np.argmax(t.sum(axis=1)))
    j_star = int(np.argmax(t[i_star]))
    return i_star, j_star


@dataclass(frozen=True)
class PourPlan:
    table: np.ndarray
    i_star: int
    j_star: int
    theta_star: float
    p_star: np.ndarray
    init_pose: RigidTransform
    n_pour: int
    gamma0: float
    pivot_body: np.ndarray
    frame: PlaneFrame = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "table",
                           np.asarray(self.table, dtype=np.float64))


def imagine_pouring(mesh: TriangleMesh,
                    containability: ContainabilityResult,
                    config: RunConfig = RunConfig()) -> PourPlan:
    """Sweep all 24 pour configurations and pick the most reliable one.

    Pours run on private worlds over shared immutable meshes, so config.jobs
    worker threads produce the same table as a sequential sweep.
    """
    if not containability.is_open_container or len(containability.footprint) == 0:
        raise NotAContainerError(
            f"{mesh.name}: omega={containability.omega:.4f} is not above "
            f"threshold; nothing to pour into")
    aabb = compute_aabb(mesh)
    frame = footprint_frame(containability.footprint, aabb,
                            clearance=config.plane_clearance)
    cup_spec = CupSpec.from_config(config)
    cup_mesh, pivot_body = build_cup(cup_spec)
    inputs = PourInputs(
        object_mesh=mesh,
        object_index=build_collision_index(mesh),
        object_aabb=aabb,
        frame=frame,
        cup_spec=cup_spec,
        cup_mesh=cup_mesh,
        cup_index=build_collision_index(cup_mesh),
        pivot_body=pivot_body,
        config=config)
    configs = enumerate_pour_configs(frame, aabb, l_0=config.l0_indent)

    def run_one(pc: PourConfig) -> float:
        return simulate_pour(_make_world(inputs), pc, inputs)

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            scores = list(pool.map(run_one, configs))
    else:
        scores = [run_one(pc) for pc in configs]
    table = np.array(scores).reshape(N_THETA, N_INDENT)
    i_star, j_star = select_best(table)
    best = configs[i_star * N_INDENT + j_star]
    init_pose = cup_initial_pose(best, frame, pivot_body, cup_spec.slant_angle)
    return PourPlan(table=table, i_star=i_star, j_star=j_star,
                    theta_star=best.theta_pour, p_star=best.p_pour,
                    init_pose=init_pose, n_pour=config.n_pour,
                    gamma0=config.gamma0, pivot_body=pivot_body, frame=frame)


def replay_best_pour(mesh: TriangleMesh, plan: PourPlan, config: RunConfig,
                     frame_sink) -> float:
    """Re-run the winning pour with frame capture (for export)."""
    aabb = compute_aabb(mesh)
    cup_spec = CupSpec.from_config(config)
    cup_mesh, pivot_body = build_cup(cup_spec)
    inputs = PourInputs(
        object_mesh=mesh, object_index=build_collision_index(mesh),
        object_aabb=aabb, frame=plan.frame, cup_spec=cup_spec,
        cup_mesh=cup_mesh, cup_index=build_collision_index(cup_mesh),
        pivot_body=pivot_body, config=config)
    best = PourConfig(plan.i_star, plan.j_star, plan.theta_star, plan.p_star)
    return simulate_pour(_make_world(inputs), best, inputs,
                         frame_sink=frame_sink)
