"""Acceptance suite: one or more tests per criterion, summarised at the end of the run.

Every test carries a ``criterion`` marker; ``conftest.py`` prints one
PASS/FAIL line per criterion together with the measured values each test
records through ``record_property``.
"""
from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy.spatial import cKDTree

from cvtanim.effects import centroid_depths, erosion_schedule, heat_deactivation_schedule, heat_evolve, heat_state
from cvtanim.effects import morph_cell
from cvtanim.geometry import RigidTransform, box_polyhedron, polyhedron_moments
from cvtanim.pipeline import ProjectConfig, SyntheticSceneSpec, run_pipeline, synth_sequence
from cvtanim.simulation import RecallSpring, Scene, SimConfig, StaticTarget, body_from_cell, gjk_distance
from cvtanim.simulation import recall_force, run
from cvtanim.tessellation import (
    CVTConfig,
    clipped_tessellation,
    cvt_energy,
    cvt_energy_gradient,
    optimize_cvt,
    point_to_surface_error,
)
from cvtanim.tracking import (
    Pose,
    TrackingConfig,
    build_template,
    deformed_points,
    observation_sites,
    observations_from_cloud,
    pose_distance,
    prior_energy,
    render_template,
    track_sequence,
)
from cvtanim.volumes import SphereVolume
from oracles import central_difference
from test_effects import random_cell, random_graph, rupture_step
from test_simulation import _return_time
from test_tessellation import UNIT_BALL_POLYTOPE, ball_sites

NO_GRAVITY = (0.0, 0.0, 0.0)


def cube(center=(0.0, 0.0, 0.0), size=1.0):
    c = np.asarray(center, dtype=float)
    return box_polyhedron(c - 0.5 * size, c + 0.5 * size)


def _g(x: float) -> str:
    return f"{x:.4g}"


@pytest.fixture(scope="module")
def sphere500():
    t0 = time.perf_counter()
    cvt = optimize_cvt(SphereVolume(), CVTConfig(n_sites=500, iterations=10, seed=0))
    return cvt, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# tessellation
# ---------------------------------------------------------------------------

@pytest.mark.criterion("CVT energy monotonicity")
def test_cvt_energy_monotone(sphere500, record_property):
    cvt, elapsed = sphere500
    E = np.array(cvt.energy_history)
    worst = float(np.max(np.diff(E)) / E[0])
    record_property("max_rel_increase", _g(worst))
    record_property("time_s", _g(elapsed))
    assert len(E) == 11
    assert worst <= 1e-9
    assert elapsed < 120.0


@pytest.mark.criterion("CVT surface error improvement")
def test_cvt_improvement(record_property):
    seq = synth_sequence(SyntheticSceneSpec(shape="sphere", motion="static", frames=1, samples=20000, scale=1.0), 0)
    vol, cloud = seq.volumes[0], seq.clouds[0]
    e0 = point_to_surface_error(cloud, optimize_cvt(vol, CVTConfig(n_sites=2000, iterations=0)))
    e10 = point_to_surface_error(cloud, optimize_cvt(vol, CVTConfig(n_sites=2000, iterations=10)))
    record_property("ratio", _g(e10 / e0))
    assert e10 <= 0.85 * e0


@pytest.mark.criterion("Partition property")
def test_partition_sphere(sphere500, record_property):
    cvt, _ = sphere500
    total = clipped_tessellation(cvt.sites, SphereVolume(), 16).volumes.sum()
    ratio = total / (4.0 * math.pi / 3.0)
    record_property("volume_ratio", _g(ratio))
    assert 0.97 <= ratio <= 1.001


@pytest.mark.criterion("Gradient oracle")
def test_gradient_finite_differences(record_property):
    worst = 0.0
    for seed in range(20):
        X = ball_sites(100 + seed, 10)
        g = cvt_energy_gradient(clipped_tessellation(X, UNIT_BALL_POLYTOPE, 4))
        fd = central_difference(lambda Y: cvt_energy(clipped_tessellation(Y, UNIT_BALL_POLYTOPE, 4)), X, 1e-5)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    record_property("max_rel_err", _g(worst))
    assert worst < 1e-4


# ---------------------------------------------------------------------------
# tracking
# ---------------------------------------------------------------------------

@pytest.mark.criterion("Tracking exactness on rigid motion")
def test_track_rigid_translation(record_property):
    t0 = time.perf_counter()
    spec = SyntheticSceneSpec(shape="sphere", motion="rigid", frames=10, samples=500, velocity=(0.05, 0.0, 0.0))
    seq = synth_sequence(spec, 1)
    cvt = optimize_cvt(seq.volumes[0], CVTConfig(n_sites=500, iterations=3))
    cfg = TrackingConfig(n_patches=20)
    template = build_template(cvt, cfg)
    # the template seen through the true motion: exact correspondences exist
    obs = render_template(template, Pose.identity(template.n_patches))
    frames = [obs.translated(tr["body"].translation) for tr in seq.transforms]
    windows = track_sequence(template, frames, cfg)
    elapsed = time.perf_counter() - t0
    poses = [p for w in windows for p in w.poses]
    err = max(float(np.linalg.norm(T.translation - tr["body"].translation))
               for P, tr in zip(poses, seq.transforms) for T in P.transforms)
    prior = max(prior_energy(template, w) for w in windows)
    record_property("cells", len(cvt))
    record_property("translation_err_m", _g(err))
    record_property("prior", _g(prior))
    record_property("time_s", _g(elapsed))
    assert len(cvt) == 500 and template.n_patches == 20
    assert err < 1e-3
    assert prior < 1e-6
    assert elapsed < 300.0


@pytest.mark.criterion("Tracking on non-rigid bend")
def test_track_cylinder_bend(record_property):
    seq = synth_sequence(SyntheticSceneSpec(shape="cylinder", motion="bend", bend_angle=30.0, frames=20,
                                            samples=2000), 2)
    cvt = optimize_cvt(seq.volumes[0], CVTConfig(n_sites=250, iterations=5, clip_resolution=6))
    cfg = TrackingConfig()
    template = build_template(cvt, cfg)
    frames = [observations_from_cloud(c, observation_sites(v, 250, seed=2 + k))
              for k, (c, v) in enumerate(zip(seq.clouds, seq.volumes))]
    poses = [p for w in track_sequence(template, frames, cfg) for p in w.poses]
    dist = []
    for P, cloud in zip(poses, seq.clouds):
        X = deformed_points(template, P)[template.is_surface]
        dist.append(float(cKDTree(cloud.points).query(X)[0].mean()))
    worst = max(dist) / template.mean_circumradius
    record_property("worst_frame_over_circumradius", _g(worst))
    assert len(poses) == 20
    assert worst < 1.0


@pytest.mark.criterion("Pose-distance invariance")
def test_pose_distance_left_invariance(record_property):
    cvt = optimize_cvt(SphereVolume(radius=0.5), CVTConfig(n_sites=60, iterations=2, clip_resolution=6, seed=5))
    template = build_template(cvt, TrackingConfig(n_patches=6))
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        T = Pose(tuple(RigidTransform.from_rotvec(rng.normal(size=3), rng.normal(size=3))
                       for _ in range(template.n_patches)))
        G = RigidTransform.from_rotvec(rng.normal(size=3) * 2.0, rng.normal(size=3) * 3.0)
        worst = max(worst, pose_distance(template, T, T.left_compose(G)))
    record_property("max_D", _g(worst))
    assert worst < 1e-9


# ---------------------------------------------------------------------------
# simulation
# ---------------------------------------------------------------------------

@pytest.mark.criterion("Simulation free fall and elastic collision")
def test_free_fall(record_property):
    b = body_from_cell(cube(), density=1.0)
    s = Scene([b], config=SimConfig(dt=0.01))
    run(s, 100)
    drop = sum(9.8 * i * 0.01 * 0.01 for i in range(1, 101))
    err = max(abs(-b.position[1] - drop), float(np.abs(b.velocity - [0.0, -9.8, 0.0]).max()))
    record_property("free_fall_err", _g(err))
    assert err <= 1e-9


@pytest.mark.criterion("Simulation free fall and elastic collision")
def test_elastic_collision(record_property):
    a = body_from_cell(cube((-0.55, 0.0, 0.0)))
    b = body_from_cell(cube((0.55, 0.0, 0.0)))
    a.velocity, b.velocity = [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]
    cfg = SimConfig(gravity=NO_GRAVITY, restitution=1.0, friction=0.0, dt=1e-3, baumgarte=0.0, slop=0.0)
    s = Scene([a, b], config=cfg)
    p0 = s.total_momentum()
    run(s, 200)
    dp = float(np.abs(s.total_momentum() - p0).max() / a.mass)
    dv = float(max(np.abs(a.velocity - [-1.0, 0.0, 0.0]).max(), np.abs(b.velocity - [1.0, 0.0, 0.0]).max()))
    record_property("momentum_err", _g(dp))
    record_property("exchange_err", _g(dv))
    assert dp <= 1e-6
    assert dv <= 1e-3


@pytest.mark.criterion("GJK cube distances")
def test_gjk_cubes(record_property):
    gap = gjk_distance(cube(), cube((3.0, 0.0, 0.0))).distance
    overlap = gjk_distance(cube(), cube((0.5, 0.2, 0.0))).distance
    corner = gjk_distance(cube(), cube((2.0, 2.0, 2.0))).distance
    err = max(abs(gap - 2.0), abs(overlap), abs(corner - math.sqrt(3.0)))
    record_property("max_err", _g(err))
    assert err <= 1e-6


@pytest.mark.criterion("Recall spring")
def test_recall_spring(record_property):
    t, _ = _return_time([0.2, 0.0, 0.0])
    record_property("return_time_s", _g(t))
    assert t <= 0.5
    b = body_from_cell(cube(), density=1.0)
    b.position = np.array([-0.1, 0.0, 0.0])
    b.velocity = np.array([0.0, -0.5, 0.0])
    F, _ = recall_force(RecallSpring(StaticTarget(np.zeros(3)), 100.0, 10.0), b, 0.0)
    assert F.tolist() == [10.0, 5.0, 0.0]
    b.position = np.zeros(3)
    b.velocity = np.zeros(3)
    F, _ = recall_force(RecallSpring(StaticTarget(np.zeros(3)), 100.0, 10.0), b, 0.0)
    assert not F.any()


# ---------------------------------------------------------------------------
# effects
# ---------------------------------------------------------------------------

@pytest.mark.criterion("Heat diffusion")
def test_heat_two_node(record_property):
    st_ = heat_state([[0, 1]], 2, [1.0, 0.0])
    ts = np.linspace(0.0, 5.0, 51)
    F = heat_evolve(st_, ts)
    e = np.exp(-2.0 * ts)
    err = float(np.abs(F - np.vstack([0.5 * (1 + e), 0.5 * (1 - e)])).max())
    t_cross = float(heat_deactivation_schedule(st_, 0.4).times[1])
    record_property("closed_form_err", _g(err))
    record_property("crossing_err", _g(abs(t_cross - math.log(5.0) / 2.0)))
    assert err <= 1e-10
    assert t_cross == pytest.approx(math.log(5.0) / 2.0, abs=1e-6)


@pytest.mark.criterion("Heat diffusion")
def test_heat_conservation(record_property):
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        st_ = heat_state(random_graph(rng, 200, 0.008), 200, rng.uniform(size=200))
        comp = st_.components()
        F = heat_evolve(st_, np.array([0.0, 0.05, 1.0, 10.0, 100.0]))
        for c in np.unique(comp):
            m = comp == c
            worst = max(worst, float(np.abs(F[m].sum(0) - st_.F0[m].sum()).max()))
    record_property("max_conservation_err", _g(worst))
    assert worst <= 1e-8


@pytest.mark.criterion("Effects schedules")
def test_erosion_order(sphere500):
    cvt, _ = sphere500
    assert len(cvt) == 500
    d = centroid_depths(cvt)
    order = erosion_schedule(cvt, speed=0.05).order()
    assert np.all(np.diff(d[order]) >= 0.0)


@pytest.mark.criterion("Effects schedules")
def test_rupture_trigger(record_property):
    # above the spring's static load (about 40 N), so only the impact can trigger
    threshold = 100.0
    step_a, first_over, probe = rupture_step(threshold)
    step_b, _, _ = rupture_step(threshold)
    record_property("trigger_step", step_a)
    assert step_a is not None and step_a == first_over == step_b
    assert all(f <= threshold for k, f, _ in probe if k < step_a)
    assert step_a > 100


@pytest.mark.criterion("Morph endpoints")
def test_morph_endpoints_and_continuity(record_property):
    A, B = random_cell(1), random_cell(2, 0.2)
    Ta = RigidTransform.from_rotvec([0.1, 0.2, 0.3], [1.0, 0.0, 0.0])
    Tb = RigidTransform.from_rotvec([-0.4, 0.0, 0.2], [0.0, 2.0, 0.0])
    vol = lambda P: polyhedron_moments(P)[0]
    e0 = abs(vol(morph_cell(A, Ta, B, Tb, 0.0).shape) / vol(A) - 1.0)
    e1 = abs(vol(morph_cell(A, Ta, B, Tb, 1.0).shape) / vol(B) - 1.0)
    V = np.array([vol(morph_cell(A, Ta, B, Tb, float(u)).shape) for u in np.linspace(0.0, 1.0, 1001)])
    step_ = float(np.max(np.abs(np.diff(V)) / np.minimum(V[:-1], V[1:])))
    record_property("endpoint_err", _g(max(e0, e1)))
    record_property("max_step", _g(step_))
    assert e0 <= 0.01 and e1 <= 0.01
    assert step_ <= 0.01


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------

@pytest.mark.criterion("End-to-end determinism")
def test_end_to_end_determinism(tmp_path, record_property):
    stages = ["synth", "tessellate", "track", "simulate"]
    logs = ("synth/sequence.json", "tessellate/cvt.json", "track/poses.json", "simulate/states.json")
    t0 = time.perf_counter()
    for name in ("a", "b"):
        cfg = ProjectConfig.from_dict({"workdir": str(tmp_path / name), "seed": 3, "stages": stages,
                                       "effects": {"erosion": {"speed": 0.05}}})
        run_pipeline(cfg)
    elapsed = time.perf_counter() - t0
    record_property("time_s", _g(elapsed))
    for rel in logs:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel
    assert elapsed < 1800.0
