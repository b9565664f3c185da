"""Particle dynamics: integration, contacts, schedules, failure modes."""
from __future__ import annotations

import numpy as np
import pytest

from opencontain import meshgen
from opencontain.errors import SimulationUnstableError, SpawnOverlapError
from opencontain.geometry import RigidTransform
from opencontain.physics.bvh import build_collision_index
from opencontain.physics.engine import (
    KinematicMotion,
    MeshBody,
    ParticleSpec,
    SimWorld,
    apply_force_field,
    is_settled,
    spawn_particles,
    step,
)

DT = 1.0 / 240.0
G = -9.81


def _bare_world() -> SimWorld:
    return SimWorld(ParticleSpec())


def _mesh_world(mesh) -> SimWorld:
    body = MeshBody(mesh, build_collision_index(mesh), RigidTransform.identity())
    return SimWorld(ParticleSpec(), object_body=body)


# ---------------------------------------------------------------------------
# integrator accuracy

def test_free_fall_single_step():
    w = _bare_world().spawn([[0.0, 0.0, 1.0]])
    step(w)
    # semi-implicit Euler: velocity first, then position with the new velocity
    assert abs(w.velocities[0, 2] - G * DT) < 1e-12
    assert abs(w.positions[0, 2] - (1.0 + G * DT * DT)) < 1e-12


def test_free_fall_hundred_steps_closed_form():
    w = _bare_world().spawn([[0.0, 0.0, 2.0]])
    w.run(100)
    n = 100
    assert abs(w.velocities[0, 2] - n * G * DT) < 1e-12
    expect_z = 2.0 + G * DT * DT * n * (n + 1) / 2.0
    assert abs(w.positions[0, 2] - expect_z) < 1e-12


def test_force_field_velocity_ramp():
    w = _bare_world().spawn([[0.0, 0.0, 5.0]])
    apply_force_field(w, (0.5, 0.0, 0.0))
    w.run(100)
    assert abs(w.velocities[0, 0] - 0.5 * 100 * DT) < 1e-12
    apply_force_field(w, (0.0, 0.0, 0.0))
    w.run(10)
    assert abs(w.velocities[0, 0] - 0.5 * 100 * DT) < 1e-12  # ramp stopped


def test_force_field_rejects_nonfinite():
    w = _bare_world()
    with pytest.raises(ValueError):
        apply_force_field(w, (np.inf, 0.0, 0.0))


# ---------------------------------------------------------------------------
# contacts

def test_ground_bounce_restitution_ratio():
    w = _bare_world().spawn([[0.0, 0.0, 0.1]])
    prev_vz = 0.0
    for _ in range(200):
        step(w)
        vz = w.velocities[0, 2]
        if vz > 0.0:
            # the impact step integrated gravity before resolving the contact
            incoming = prev_vz + G * DT
            assert abs(vz / (-incoming) - 0.1) < 1e-6
            return
        prev_vz = vz
    pytest.fail("particle never bounced")


def test_particle_rests_at_radius_height():
    w = _bare_world().spawn([[0.0, 0.0, 0.05]])
    w.run(500)
    assert w.positions[0, 2] == pytest.approx(0.005, abs=1e-6)
    assert is_settled(w, 1e-3)


def test_head_on_particle_bounce():
    # equal masses, approach speed 2.0 well above the restitution threshold
    w = _bare_world().spawn([[-0.02, 0.0, 5.0], [0.02, 0.0, 5.0]])
    w.velocities[0, 0] = 1.0
    w.velocities[1, 0] = -1.0
    w.run(10)
    assert np.allclose(w.velocities[:, 0], [-0.1, 0.1], atol=1e-9)


def test_settled_pile_energy_non_increasing():
    w = _bare_world()
    xs = np.linspace(-0.011, 0.011, 3)
    grid = [[x, y, 0.05] for x in xs for y in xs]
    spawn_particles(w, grid)
    w.run(700)
    energies = []
    for _ in range(8):
        w.run(100)
        energies.append(w.kinetic_energy())
    diffs = np.diff(energies)
    assert np.all(diffs <= 1e-6)


def test_particles_rest_on_mesh_not_inside():
    mesh = meshgen.solid_box(0.10, 0.10, 0.04)
    w = _mesh_world(mesh).spawn([[0.0, 0.0, 0.08]])
    w.run(600)
    # box top is z=0.04; center must sit one radius above, minus at most slop
    assert w.positions[0, 2] > 0.04 + 0.005 - 2e-4
    assert is_settled(w, 1e-3)


# ---------------------------------------------------------------------------
# kinematic motion

def test_motion_sampling_lerp_and_clamp():
    a = RigidTransform.identity()
    b = RigidTransform.from_axis_angle((0, 0, 1), np.pi / 2)
    b = RigidTransform(b.rotation, np.array([1.0, 0.0, 0.0]))
    motion = KinematicMotion(np.array([0, 10]), (a, b))
    mid = motion.sample(5)
    assert np.allclose(mid.translation, [0.5, 0.0, 0.0])
    quarter = RigidTransform.from_axis_angle((0, 0, 1), np.pi / 4)
    assert np.abs(mid.rotation - quarter.rotation).max() < 1e-12
    assert motion.sample(-3).is_close(a)
    assert motion.sample(25).is_close(b)
    assert motion.sample(10).is_close(b)


def test_motion_validation():
    a = RigidTransform.identity()
    with pytest.raises(ValueError):
        KinematicMotion(np.array([5, 5]), (a, a))       # not increasing
    with pytest.raises(ValueError):
        KinematicMotion(np.array([0, 1]), (a,))         # count mismatch
    with pytest.raises(ValueError):
        KinematicMotion(np.array([]), ())               # empty


def test_set_motion_in_the_past_rejected():
    mesh = meshgen.solid_box(0.05, 0.05, 0.05)
    w = _mesh_world(mesh)
    w.run(5)
    motion = KinematicMotion(np.array([2, 8]), (RigidTransform.identity(),) * 2)
    with pytest.raises(ValueError):
        w.set_motion("object", motion)


def test_kinematic_body_pose_advances():
    mesh = meshgen.solid_box(0.05, 0.05, 0.05)
    w = _mesh_world(mesh)
    end = RigidTransform(np.eye(3), np.array([0.0, 0.0, 0.2]))
    w.set_motion("object", KinematicMotion(np.array([0, 20]),
                                           (RigidTransform.identity(), end)))
    w.run(10)
    assert np.allclose(w.object.pose.translation, [0.0, 0.0, 0.1])
    w.run(10)
    assert w.object.pose.is_close(end)


# ---------------------------------------------------------------------------
# world bookkeeping and failure modes

def test_spawn_overlap_rejected():
    w = _bare_world()
    with pytest.raises(SpawnOverlapError):
        w.spawn([[0.0, 0.0, 0.1], [0.009, 0.0, 0.1]])


def test_spawn_keeps_drop_positions():
    w = _bare_world().spawn([[0.0, 0.0, 0.3]])
    w.run(50)
    w.spawn([[0.1, 0.0, 0.3]])
    assert np.allclose(w.drop_positions, [[0.0, 0.0, 0.3], [0.1, 0.0, 0.3]])
    assert w.n_particles == 2


def test_missing_body_lookup_raises():
    w = _bare_world()
    with pytest.raises(ValueError):
        w.body("cup")


def test_run_argument_validation():
    w = _bare_world().spawn([[0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        w.run(-1)
    z = w.positions[0, 2]
    w.run(0)
    assert w.positions[0, 2] == z and w.step_count == 0


def test_sink_receives_stride_snapshots():
    w = _bare_world().spawn([[0.0, 0.0, 1.0]])
    seen = []
    w.run(10, sink=lambda world: seen.append(world.step_count), stride=3)
    assert seen == [3, 6, 9, 10]


def test_runaway_state_raises():
    w = _bare_world().spawn([[0.0, 0.0, 1.0]])
    apply_force_field(w, (1e9, 0.0, 0.0))
    with pytest.raises(SimulationUnstableError, match="runaway"):
        w.run(10)


def test_contact_buffer_overflow_raises():
    # a 200-segment fan puts hundreds of triangles under one particle
    mesh = meshgen.translate(
        meshgen.truncated_cone_shell(0.05, 0.05, 0.02, 0.004, 200),
        (0.0, 0.0, 0.024))
    w = _mesh_world(mesh).spawn([[0.0, 0.0, 0.05]])
    with pytest.raises(SimulationUnstableError, match="overflow"):
        w.run(300)


def test_particle_spec_validation():
    with pytest.raises(ValueError):
        ParticleSpec(radius=0.0)
    with pytest.raises(ValueError):
        ParticleSpec(restitution=1.5)
    with pytest.raises(ValueError):
        ParticleSpec(friction=-0.1)


def test_determinism_bitwise():
    def scenario():
        w = _mesh_world(meshgen.open_box(0.06, 0.06, 0.03, 0.006))
        xs = np.linspace(-0.015, 0.015, 3)
        spawn_particles(w, [[x, y, 0.06] for x in xs for y in xs])
        w.run(200)
        apply_force_field(w, (0.5, 0.0, 0.0))
        w.run(100)
        apply_force_field(w, (0.0, 0.0, 0.0))
        w.run(200)
        return w.positions.tobytes(), w.velocities.tobytes()

    assert scenario() == scenario()
