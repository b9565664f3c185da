"""Particle dynamics: BVH collision queries plus the impulse-based stepper."""
from .bvh import CollisionIndex, build_collision_index, meshes_overlap, query_sphere
from .engine import (
    DEFAULT_DT,
    DEFAULT_GRAVITY,
    KinematicMotion,
    MeshBody,
    ParticleSpec,
    SimWorld,
    SolverParams,
    apply_force_field,
    drive_kinematic,
    is_settled,
    spawn_particles,
    step,
)

__all__ = [
    "CollisionIndex",
    "build_collision_index",
    "meshes_overlap",
    "query_sphere",
    "DEFAULT_DT",
    "DEFAULT_GRAVITY",
    "KinematicMotion",
    "MeshBody",
    "ParticleSpec",
    "SimWorld",
    "SolverParams",
    "apply_force_field",
    "drive_kinematic",
    "is_settled",
    "spawn_particles",
    "step",
]
