"""Shared scene builders, frozen reference values, and session fixtures.

The engine is fully deterministic, so simulation outcomes observed once are
stable across runs and machines with the same dependency versions. Counts
recorded here act as regression anchors: a drift means behavior changed.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
import pytest

from opencontain import meshgen
from opencontain.config import RunConfig
from opencontain.containability import (
    ContainabilityResult,
    count_retained,
    default_schedule,
    imagine_containability,
    plan_grid,
    run_drop,
    run_perturbations,
)
from opencontain.evaluation import EvalReport, evaluate, load_manifest
from opencontain.geometry import RigidTransform, TriangleMesh, compute_aabb, save_obj
from opencontain.physics.bvh import build_collision_index
from opencontain.physics.engine import MeshBody, ParticleSpec, SimWorld, SolverParams
from opencontain.pouring import PourPlan, imagine_pouring


# ---------------------------------------------------------------------------
# scene builders

def mounted_drain(size: float, hole: float, name: str) -> TriangleMesh:
    """Holed box raised on end posts over a steep shedding wedge.

    Particles that fall through the bottom hole land on the wedge (42 degree
    pitch, far beyond the friction angle) and slide out past the wedge's low
    edge, which is also the bounding-box face, so drained particles end up
    strictly outside. With a hole smaller than a particle nothing drains and
    the box keeps its load.
    """
    post_w = 0.006
    parts = [
        meshgen.translate(meshgen.holed_box(size, size, 0.07, 0.01, hole, hole),
                          (0.0, 0.0, 0.105)),
        meshgen.translate(meshgen.solid_box(post_w, size, 0.105),
                          ((size - post_w) / 2.0, 0.0, 0.0)),
        meshgen.translate(meshgen.solid_box(post_w, size, 0.105),
                          (-(size - post_w) / 2.0, 0.0, 0.0)),
        meshgen.translate(meshgen.wedge_block(size - 2.0 * post_w, size,
                                              0.095, 0.005),
                          (0.0, 0.01, 0.0)),
    ]
    return meshgen.merge(parts, name=name)


def pedestal_dish() -> TriangleMesh:
    """Tall flat-topped pedestal with low catch trays at both feet.

    Containment comes only from the foot trays: pours released close to the
    center land on the pedestal top (level with the bounding-box top, so they
    never count), while pours released farther out clear the top edge and
    drop down the face into the trays. Retention therefore grows with the
    indentation of the release point, which is the property the pour-sweep
    monotonicity tests assert.
    """
    half_x, half_y, height = 0.155, 0.03, 0.50
    tray_w, tray_top = 0.03, 0.02
    parts = [
        meshgen.solid_box(2 * half_x, 2 * half_y, height, name="pedestal"),
        meshgen.translate(meshgen.solid_box(tray_w, 2 * half_y, tray_top),
                          (half_x + tray_w / 2, 0.0, 0.0)),
        meshgen.translate(meshgen.solid_box(tray_w, 2 * half_y, tray_top),
                          (-(half_x + tray_w / 2), 0.0, 0.0)),
    ]
    return meshgen.merge(parts, name="pedestal_dish")


def wide_box() -> TriangleMesh:
    return meshgen.open_box(0.30, 0.30, 0.07, 0.01, name="wide_box")


def _grid_patch(corner, edge_u, edge_v, nu: int, nv: int) -> TriangleMesh:
    """Rectangular patch tessellated into 2*nu*nv triangles."""
    corner = np.asarray(corner, dtype=np.float64)
    us = np.linspace(0.0, 1.0, nu + 1)[:, None] * np.asarray(edge_u, dtype=np.float64)
    vs = np.linspace(0.0, 1.0, nv + 1)[:, None] * np.asarray(edge_v, dtype=np.float64)
    verts = (corner + us[:, None, :] + vs[None, :, :]).reshape(-1, 3)
    tris = []
    for i in range(nu):
        for j in range(nv):
            a = i * (nv + 1) + j
            b = a + (nv + 1)
            tris.append((a, b, b + 1))
            tris.append((a, b + 1, a + 1))
    return TriangleMesh(verts, np.array(tris, dtype=np.int64))


def tessellated_tray() -> TriangleMesh:
    """Open tray as a finely and uniformly tessellated shell, 10080 triangles.

    Stands in for a high-resolution scan: many small triangles, none
    degenerate, modest local contact counts. The 0.20 x 0.10 footprint fills
    the drop lattice to exactly its 200-particle cap.
    """
    hx, hy, hz = 0.10, 0.05, 0.06
    nf, nw = 60, 18
    patches = [
        _grid_patch((-hx, -hy, 0.0), (2 * hx, 0, 0), (0, 2 * hy, 0), nf, nf // 2),
        _grid_patch((-hx, -hy, 0.0), (0, 2 * hy, 0), (0, 0, hz), nf // 2, nw),
        _grid_patch((hx, -hy, 0.0), (0, 2 * hy, 0), (0, 0, hz), nf // 2, nw),
        _grid_patch((-hx, -hy, 0.0), (2 * hx, 0, 0), (0, 0, hz), nf, nw),
        _grid_patch((-hx, hy, 0.0), (2 * hx, 0, 0), (0, 0, hz), nf, nw),
    ]
    return meshgen.merge(patches, name="tessellated_tray")


def slot_box() -> TriangleMesh:
    return meshgen.open_box(0.22, 0.06, 0.07, 0.01, name="slot_box")


# ---------------------------------------------------------------------------
# classification corpus with frozen outcomes

@dataclass(frozen=True)
class CorpusShape:
    name: str
    category: str
    label: bool
    n_in: int
    n_drop: int
    mesh: TriangleMesh


def build_corpus() -> tuple[CorpusShape, ...]:
    """Twelve synthetic shapes with known open-container ground truth."""
    rows = [
        ("deep_box", "box", True, 64, 100,
         meshgen.open_box(0.10, 0.10, 0.06, 0.01, name="deep_box")),
        ("shallow_box", "box", True, 36, 64,
         meshgen.open_box(0.08, 0.08, 0.03, 0.008, name="shallow_box")),
        ("cyl_cup", "cylinder", True, 36, 64,
         meshgen.translate(meshgen.truncated_cone_shell(
             0.04, 0.04, 0.08, 0.004, 32, name="cyl_cup"), (0, 0, 0.084))),
        ("cone_cup", "cone", True, 72, 100,
         meshgen.translate(meshgen.truncated_cone_shell(
             0.05, 0.03, 0.07, 0.004, 32, name="cone_cup"), (0, 0, 0.074))),
        ("slot_box", "box", True, 80, 132, slot_box()),
        ("dish", "box", True, 100, 144,
         meshgen.open_box(0.12, 0.12, 0.025, 0.008, name="dish")),
        ("keep_box", "holed_box", True, 49, 90,
         mounted_drain(0.09, 0.008, "keep_box")),
        ("solid_small", "solid", False, 0, 64,
         meshgen.solid_box(0.08, 0.08, 0.05, name="solid_small")),
        ("solid_flat", "solid", False, 0, 144,
         meshgen.solid_box(0.12, 0.12, 0.02, name="solid_flat")),
        ("plate", "plate", False, 0, 196,
         meshgen.solid_box(0.15, 0.15, 0.008, name="plate")),
        ("plate_tiny", "plate", False, 0, 72,
         meshgen.solid_box(0.06, 0.06, 0.005, name="plate_tiny")),
        ("drain_box", "holed_box", False, 0, 72,
         mounted_drain(0.08, 0.059, "drain_box")),
    ]
    return tuple(CorpusShape(*row) for row in rows)


# ---------------------------------------------------------------------------
# frozen pour tables (retained-particle counts out of 60)

WIDE_TABLE_COUNTS = np.array([
    [60, 54, 0], [60, 60, 0], [60, 50, 0], [60, 60, 0],
    [60, 50, 0], [60, 60, 0], [60, 55, 0], [60, 60, 0]])

SLOT_TABLE_COUNTS = np.array([
    [55, 55, 0], [60, 0, 0], [60, 0, 0], [58, 0, 0],
    [56, 55, 0], [60, 0, 0], [60, 0, 0], [58, 0, 0]])

PEDESTAL_TABLE_COUNTS = np.array([
    [0, 0, 2], [0, 0, 0], [0, 0, 0], [0, 0, 0],
    [0, 0, 12], [0, 0, 0], [0, 0, 0], [0, 0, 0]])


# ---------------------------------------------------------------------------
# grid planner cases: (ext_x, ext_y, n_max, n_min) -> (n_x, n_y, n_z)

GRID_CASES = [
    (0.10, 0.10, 200, 40, 10, 10, 1),
    (0.08, 0.08, 200, 40, 8, 8, 1),
    (0.22, 0.06, 200, 40, 22, 6, 1),
    (0.12, 0.12, 200, 40, 12, 12, 1),
    (0.15, 0.15, 200, 40, 14, 14, 1),     # 225 > n_max, sqrt rescale
    (0.06, 0.06, 200, 40, 6, 6, 2),       # 36 < n_min, second layer
    (0.30, 0.30, 200, 40, 14, 14, 1),
    (0.37, 0.06, 200, 40, 35, 5, 1),
    (0.005, 0.005, 200, 40, 1, 1, 40),    # sub-diameter extent clamps to 1
    (0.015, 0.015, 200, 40, 1, 1, 40),
    (0.025, 0.015, 200, 40, 2, 1, 20),
    (2.05, 0.015, 200, 40, 202, 1, 1),    # rescale cannot shrink a clamped axis
    (0.10, 0.06, 200, 40, 10, 6, 1),
    (0.10, 0.038, 200, 40, 10, 3, 2),
    (0.20, 0.10, 200, 40, 20, 10, 1),     # exactly n_max, no rescale
    (0.21, 0.10, 200, 40, 20, 9, 1),
    (0.04, 0.39, 200, 40, 4, 39, 1),
    (0.0999, 0.0999, 200, 40, 9, 9, 1),
    (0.019, 0.052, 200, 40, 1, 5, 8),
    (0.10, 0.10, 50, 40, 7, 7, 1),
]


# ---------------------------------------------------------------------------
# independent oracles

def brute_force_auc(scores, labels) -> float:
    """Pairwise AUC by explicit double loop, ties counted half."""
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def closest_point_on_triangle(p, a, b, c) -> np.ndarray:
    """Standard region-walk closest point; independent of the BVH kernels."""
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0.0 and d2 <= 0.0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0.0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 <= d1 and d3 <= 0.0:
        return a + (d1 / (d1 - d3)) * ab
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0.0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 <= d2 and d6 <= 0.0:
        return a + (d2 / (d2 - d6)) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and d4 - d3 >= 0.0 and d5 - d6 >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return b + w * (c - b)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return a + ab * v + ac * w


def closest_points_on_triangles(p, a, b, c) -> np.ndarray:
    """Vectorized form of the region walk, one point against (m,3) corners."""
    p = np.asarray(p, dtype=np.float64)
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    out = np.empty_like(ab)
    done = np.zeros(len(ab), dtype=bool)

    def settle(mask, value):
        nonlocal done
        take = mask & ~done
        out[take] = value[take] if value.ndim == 2 else value
        done |= take

    with np.errstate(divide="ignore", invalid="ignore"):
        settle((d1 <= 0) & (d2 <= 0), a)
        settle((d3 >= 0) & (d4 <= d3), b)
        t = d1 / (d1 - d3)
        settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t[:, None] * ab)
        settle((d6 >= 0) & (d5 <= d6), c)
        t = d2 / (d2 - d6)
        settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t[:, None] * ac)
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        settle((va <= 0) & (d4 >= d3) & (d5 >= d6), b + t[:, None] * (c - b))
        denom = 1.0 / (va + vb + vc)
        v = (vb * denom)[:, None]
        w = (vc * denom)[:, None]
        settle(np.ones(len(ab), dtype=bool), a + v * ab + w * ac)
    return out


def brute_force_sphere_hits(mesh: TriangleMesh, center, radius: float) -> set[int]:
    """Indices of triangles whose closest point lies within radius."""
    center = np.asarray(center, dtype=np.float64)
    a, b, c = mesh.corners()
    q = closest_points_on_triangles(center, a, b, c)
    d2 = np.einsum("ij,ij->i", q - center, q - center)
    return set(np.flatnonzero(d2 <= radius * radius).tolist())


@dataclass
class StagedOutcome:
    """Containment pipeline snapshot before and after the perturbations."""

    grid: object
    aabb: object
    shift: np.ndarray
    world: SimWorld
    positions_after_drop: np.ndarray
    n_after_drop: int
    n_after_schedule: int


def staged_containability(mesh: TriangleMesh, config: RunConfig) -> StagedOutcome:
    """The same pipeline the scorer runs, paused after the drop phase.

    Lets tests distinguish particles that merely land on a shape from
    particles that survive the shaking.
    """
    shift = compute_aabb(mesh).min.copy()
    local = TriangleMesh(mesh.vertices - shift, mesh.triangles, name=mesh.name)
    aabb = compute_aabb(local)
    particle = ParticleSpec(radius=config.particle_radius,
                            mass=config.particle_mass,
                            restitution=config.restitution,
                            friction=config.friction_particle)
    world = SimWorld(
        particle,
        dt=config.timestep,
        gravity=(0.0, 0.0, config.gravity_z),
        ground_z=0.0,
        object_body=MeshBody(local, build_collision_index(local),
                             RigidTransform.identity()),
        friction_mesh=config.friction_mesh,
        friction_particle=config.friction_particle,
        friction_ground=config.friction_ground,
        solver=SolverParams(iterations=config.solver_iterations,
                            beta=config.solver_beta,
                            slop=config.solver_slop,
                            rest_threshold=config.rest_threshold))
    grid = plan_grid(aabb, particle, config.n_max, config.n_min,
                     config.base_clearance, config.layer_spacing)
    run_drop(world, grid, config.drop_steps)
    n_mid = count_retained(world, aabb)
    positions_mid = world.positions.copy()
    run_perturbations(world, default_schedule(config))
    return StagedOutcome(grid, aabb, shift, world, positions_mid,
                         n_mid, count_retained(world, aabb))


# ---------------------------------------------------------------------------
# session fixtures (lazy; heavy simulations run once per session)

@pytest.fixture(scope="session")
def run_config() -> RunConfig:
    return RunConfig()


@pytest.fixture(scope="session")
def corpus() -> tuple[CorpusShape, ...]:
    return build_corpus()


@pytest.fixture(scope="session")
def corpus_manifest(tmp_path_factory, corpus):
    """OBJ files plus a manifest, the on-disk form of the corpus."""
    d = tmp_path_factory.mktemp("corpus")
    entries = []
    for s in corpus:
        save_obj(s.mesh, d / f"{s.name}.obj")
        entries.append({"mesh": f"{s.name}.obj", "label": s.label,
                        "category": s.category})
    path = d / "manifest.json"
    path.write_text(json.dumps(entries, indent=2) + "\n")
    return path


@pytest.fixture(scope="session")
def corpus_results(corpus, run_config) -> tuple[dict[str, ContainabilityResult], float]:
    t0 = time.perf_counter()
    out = {s.name: imagine_containability(s.mesh, run_config) for s in corpus}
    return out, time.perf_counter() - t0


@pytest.fixture(scope="session")
def corpus_report(corpus_manifest, run_config) -> tuple[EvalReport, float]:
    manifest = load_manifest(corpus_manifest)
    t0 = time.perf_counter()
    report = evaluate(manifest, run_config)
    return report, time.perf_counter() - t0


def _contain_and_pour(mesh: TriangleMesh, config: RunConfig):
    result = imagine_containability(mesh, config)
    t0 = time.perf_counter()
    plan = imagine_pouring(mesh, result, config)
    return result, plan, time.perf_counter() - t0


@pytest.fixture(scope="session")
def wide_box_plan(run_config) -> tuple[ContainabilityResult, PourPlan, float]:
    return _contain_and_pour(wide_box(), run_config)


@pytest.fixture(scope="session")
def slot_box_plan(run_config) -> tuple[ContainabilityResult, PourPlan, float]:
    return _contain_and_pour(slot_box(), run_config)


@pytest.fixture(scope="session")
def pedestal_plan(run_config) -> tuple[ContainabilityResult, PourPlan, float]:
    return _contain_and_pour(pedestal_dish(), run_config)
