from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvtanim.effects import (
    NEVER,
    EffectSchedule,
    GhostInstance,
    GhostSpawner,
    GhostTrajectory,
    HeatState,
    MorphPlan,
    RuptureEffect,
    ScheduleEffect,
    centroid_depths,
    erosion_schedule,
    graph_laplacian,
    heat_deactivation_schedule,
    heat_evolve,
    heat_state,
    match_cells_for_morph,
    morph_cell,
    proportional_map,
    rupture_check,
    spawn_ghosts,
)
from cvtanim.geometry import RigidTransform, box_polyhedron, convex_hull, polyhedron_moments
from cvtanim.simulation import (
    GroundPlane,
    PendulumTrajectory,
    RecallSpring,
    RigidBody,
    SampledTrajectory,
    Scene,
    SimConfig,
    StaticTarget,
    body_from_cell,
    default_spring,
    recall_force,
    run,
    step,
)
from cvtanim.tessellation import CVTConfig, optimize_cvt
from cvtanim.volumes import SphereVolume

NO_GRAVITY = (0.0, 0.0, 0.0)


def cube(center=(0.0, 0.0, 0.0), size=1.0):
    c = np.asarray(center, dtype=float)
    return box_polyhedron(c - 0.5 * size, c + 0.5 * size)


@pytest.fixture(scope="module")
def sphere_cvt():
    return optimize_cvt(SphereVolume(radius=0.5), CVTConfig(n_sites=60, iterations=3, clip_resolution=6, seed=5))


def random_graph(rng, n, p):
    A = np.triu(rng.uniform(size=(n, n)) < p, 1)
    return np.argwhere(A)


# ---------------------------------------------------------------------------
# schedules
# ---------------------------------------------------------------------------

def test_schedule_validation_and_roundtrip():
    with pytest.raises(ValueError):
        EffectSchedule([-1.0], "x")
    s = EffectSchedule([0.5, NEVER, 0.1], "erosion")
    assert s.active(0.2).tolist() == [True, True, False]
    assert s.order().tolist() == [2, 0, 1]
    r = EffectSchedule.from_dict(s.to_dict())
    assert r.kind == "erosion" and np.array_equal(r.times, s.times)
    assert s.shifted(1.0).times.tolist()[0] == 1.5
    assert s.combined(EffectSchedule([0.2, 0.3, 0.4], "heat")).times.tolist() == [0.2, 0.3, 0.1]


def test_schedule_effect_is_monotone():
    bodies = [body_from_cell(cube((2.0 * i, 0.0, 0.0))) for i in range(4)]
    springs = [default_spring(b, StaticTarget(b.position.copy())) for b in bodies]
    sched = EffectSchedule([0.05, 0.0, NEVER, 0.02], "test")
    s = Scene(bodies, springs, config=SimConfig(gravity=NO_GRAVITY, dt=0.01), effects=[ScheduleEffect(sched)])
    history = []
    run(s, 10, callback=lambda sc: history.append([sc.spring_active(i) for i in range(4)]))
    for a, b in zip(history, history[1:]):
        assert all(y <= x for x, y in zip(a, b))
    assert [e[2] for e in s.events] == [1, 3, 0]
    assert s.spring_active(2)


# ---------------------------------------------------------------------------
# rupture
# ---------------------------------------------------------------------------

def test_rupture_examples():
    b = body_from_cell(cube(), density=1.0)
    on_path = RecallSpring(StaticTarget(np.zeros(3)), 100.0, 0.0)
    assert not rupture_check(b, on_path, 10.0, 0.0)
    b.position = np.array([0.2, 0.0, 0.0])
    assert rupture_check(b, on_path, 10.0, 0.0)
    assert not on_path.active
    assert not rupture_check(b, on_path, 10.0, 0.0)
    never = RecallSpring(StaticTarget(np.zeros(3)), 100.0, 0.0)
    assert not rupture_check(b, never, math.inf, 0.0)
    assert never.active


def pendulum_impact_scene(threshold: float):
    """A sprung cube at rest hit by a heavy kinematic pendulum bob."""
    target = body_from_cell(cube((0.0, 1.0, 0.0), size=0.2), density=500.0)
    spring = default_spring(target, StaticTarget(target.position.copy()))
    traj = PendulumTrajectory(np.array([0.0, 3.0, 0.0]), 2.0, 0.6, 2.0, phase=0.0)
    x0, q0, _, _ = traj.state(0.0)
    bob = body_from_cell(cube(size=0.3), density=5000.0)
    bob.kinematic = True
    bob.trajectory = traj
    bob.position, bob.rotation = x0, q0
    cfg = SimConfig(gravity=(0.0, -9.8, 0.0), dt=1.0 / 300.0, collide_active_pairs=True)
    s = Scene([target, bob], [spring, None], config=cfg)
    probe = []

    def record(scene):
        F, _ = recall_force(spring, target, scene.time)
        probe.append((scene.step_index, float(np.linalg.norm(F)), spring.active))

    s.effects = [record, RuptureEffect(threshold)]
    return s, probe


def run_pendulum(threshold: float, steps: int = 300):
    s, probe = pendulum_impact_scene(threshold)
    run(s, steps)
    return s, probe


def rupture_step(threshold: float):
    s, probe = run_pendulum(threshold)
    events = [e for e in s.events if e[3] == "rupture"]
    first_over = next((k for k, f, active in probe if active and f > threshold), None)
    return (events[0][0] if events else None), first_over, probe


def test_pendulum_rupture_exact_and_replayable():
    # above the spring's static load (about 40 N), so only the impact can trigger
    threshold = 100.0
    step_a, first_over, probe = rupture_step(threshold)
    assert step_a is not None
    assert step_a == first_over
    assert all(f <= threshold for k, f, _ in probe if k < step_a)
    assert step_a > 100
    step_b, _, _ = rupture_step(threshold)
    assert step_a == step_b


def test_rupture_infinite_threshold_never():
    with pytest.raises(ValueError):
        RuptureEffect(0.0)
    s, _ = run_pendulum(1e300)
    assert not s.events


# ---------------------------------------------------------------------------
# heat
# ---------------------------------------------------------------------------

def test_laplacian_examples():
    np.testing.assert_array_equal(graph_laplacian([[0, 1]]), [[1, -1], [-1, 1]])
    np.testing.assert_array_equal(graph_laplacian([[0, 1], [1, 2]]), [[1, -1, 0], [-1, 2, -1], [0, -1, 1]])
    np.testing.assert_array_equal(graph_laplacian(np.array([[0, 1], [1, 0]])), [[1, -1], [-1, 1]])
    with pytest.raises(ValueError):
        graph_laplacian(np.array([[0, 1, 0], [0, 0, 0], [0, 0, 0]]))


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_laplacian_properties(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 30))
    L = graph_laplacian(random_graph(rng, n, 0.2), n)
    assert np.array_equal(L, L.T)
    np.testing.assert_allclose(L.sum(1), 0.0, atol=0)
    w, V = np.linalg.eigh(L)
    assert w.min() > -1e-10
    np.testing.assert_allclose(L @ np.ones(n), 0.0, atol=1e-12)


def test_heat_two_node_closed_form():
    st_ = heat_state([[0, 1]], 2, [1.0, 0.0])
    np.testing.assert_array_equal(heat_evolve(st_, 0.0), [1.0, 0.0])
    for t in (0.01, 0.3, 1.0, 4.0):
        e = math.exp(-2.0 * t)
        np.testing.assert_allclose(heat_evolve(st_, t), [0.5 * (1 + e), 0.5 * (1 - e)], atol=1e-10, rtol=0)


def test_heat_two_node_threshold():
    st_ = heat_state([[0, 1]], 2, [1.0, 0.0])
    s = heat_deactivation_schedule(st_, 0.4)
    assert s.times[0] == 0.0
    assert s.times[1] == pytest.approx(math.log(5.0) / 2.0, abs=1e-6)
    assert s.times[1] == pytest.approx(0.80472, abs=1e-5)
    assert heat_deactivation_schedule(st_, 0.4, time_scale=2.0).times[1] == pytest.approx(math.log(5.0), abs=2e-6)


def test_heat_limit_is_mean():
    rng = np.random.default_rng(1)
    n = 20
    edges = np.array([[i, i + 1] for i in range(n - 1)] + random_graph(rng, n, 0.1).tolist())
    F0 = rng.uniform(size=n)
    st_ = heat_state(edges, n, F0)
    lam = np.linalg.eigvalsh(st_.L)
    t = 50.0 / lam[1]
    np.testing.assert_allclose(heat_evolve(st_, t), F0.mean(), atol=1e-8)


@settings(max_examples=10)
@given(st.integers(0, 10_000))
def test_heat_conservation_and_maximum_principle(seed):
    rng = np.random.default_rng(seed)
    n = 200
    edges = random_graph(rng, n, 0.008)
    F0 = rng.uniform(size=n)
    st_ = heat_state(edges, n, F0)
    comp = st_.components()
    ts = np.array([0.0, 0.01, 0.5, 3.0, 40.0])
    F = heat_evolve(st_, ts)
    for c in np.unique(comp):
        m = comp == c
        np.testing.assert_allclose(F[m].sum(0), F0[m].sum(), atol=1e-8)
    assert F.min() >= F0.min() - 1e-10 and F.max() <= F0.max() + 1e-10


def test_heat_implicit_matches_spectral():
    rng = np.random.default_rng(3)
    n = 30
    edges = np.array([[i, i + 1] for i in range(n - 1)])
    st_ = heat_state(edges, n, rng.uniform(size=n))
    a = heat_evolve(st_, 0.7)
    b = heat_evolve(st_, 0.7, method="implicit", steps=20000)
    np.testing.assert_allclose(a, b, atol=1e-4)


def test_heat_isolated_component_never():
    edges = [[0, 1], [1, 2], [3, 4]]
    st_ = heat_state(edges, 5, [1.0, 0.0, 0.0, 0.0, 0.0])
    s = heat_deactivation_schedule(st_, 0.2)
    assert np.all(np.isfinite(s.times[:3]))
    assert np.all(np.isinf(s.times[3:]))
    assert np.all(np.diff(s.times[:3]) > 0)
    with pytest.raises(ValueError):
        heat_deactivation_schedule(st_, 1.5)


def test_heat_excluded_component():
    edges = [[0, 1], [2, 3]]
    st_ = heat_state(edges, 4, [1.0, 0.0, 1.0, 0.0])
    s = heat_deactivation_schedule(st_, 0.4, excluded=[3])
    assert np.isfinite(s.times[1])
    assert s.times[0] == 0.0
    assert np.all(np.isinf(s.times[2:]))


def test_heat_state_validation():
    with pytest.raises(ValueError):
        HeatState([1.0, 0.0], np.array([[1.0, 0.0], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        heat_evolve(heat_state([[0, 1]], 2, [1.0, 0.0]), -1.0)


# ---------------------------------------------------------------------------
# erosion
# ---------------------------------------------------------------------------

def test_erosion_examples():
    s = erosion_schedule(depths=[0.10, 0.0, 0.05], speed=0.05)
    assert s.times.tolist() == pytest.approx([2.0, 0.0, 1.0])
    assert s.kind == "erosion"
    with pytest.raises(ValueError):
        erosion_schedule(depths=[0.1], speed=0.0)


def test_erosion_depth_order_on_cvt(sphere_cvt):
    d = centroid_depths(sphere_cvt)
    r = np.linalg.norm(sphere_cvt.centroids, axis=1)
    # on a sphere the centroid depth is the radius minus the centroid norm, up to facet flatness
    assert np.all(d <= 0.5 - r + 1e-9)
    s = erosion_schedule(sphere_cvt, speed=0.1)
    order = s.order()
    assert np.all(np.diff(d[order]) >= 0.0)
    assert np.array_equal(order, np.lexsort((np.arange(len(d)), d)))


@settings(max_examples=30)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=40), st.floats(0.01, 5.0))
def test_erosion_deeper_means_later(depths, speed):
    s = erosion_schedule(depths=depths, speed=speed)
    d = np.asarray(depths)
    for i in range(len(d)):
        for j in range(len(d)):
            if d[i] < d[j]:
                assert s.times[i] <= s.times[j]


# ---------------------------------------------------------------------------
# ghosts
# ---------------------------------------------------------------------------

def test_ghost_count_and_playback():
    fps = 50.0
    ghosts = spawn_ghosts(35 / fps, 10 / fps, 0.5)
    assert len(ghosts) == 3
    assert [g.spawn_time for g in ghosts] == pytest.approx([0.2, 0.4, 0.6])
    g = GhostInstance(1.0, 0.5, NEVER, 100.0)
    assert g.playback_time(1.0 + 4.0) == pytest.approx(1.0 + 2.0)
    assert g.playback_time(0.5) == 1.0
    assert GhostInstance(1.0, 0.5, NEVER, 2.0).playback_time(50.0) == 2.0
    with pytest.raises(ValueError):
        spawn_ghosts(1.0, 0.0, 0.5)
    with pytest.raises(ValueError):
        GhostInstance(0.0, 0.0, 1.0, 1.0)


def test_ghost_unit_slowdown_is_exact_copy():
    times = np.linspace(0.0, 1.0, 11)
    pos = np.stack([times, np.sin(times), np.zeros_like(times)], axis=1)
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (11, 1))
    src = SampledTrajectory(times, pos, rot)
    g = spawn_ghosts(1.0, 0.3, 1.0, depths=[0.1, 0.2])[0]
    assert np.all(np.isinf(g.schedule.times))
    gt = GhostTrajectory(src, g)
    for t in (0.3, 0.47, 0.9):
        for a, b in zip(gt.state(t), src.state(t)):
            np.testing.assert_allclose(a, b, atol=1e-15)


def test_ghost_erosion_ends_at_lifetime():
    d = np.array([0.0, 0.05, 0.2])
    g = spawn_ghosts(1.0, 0.5, 0.5, lifetime=2.0, depths=d)[0]
    assert g.schedule.times.tolist() == pytest.approx([0.5, 1.0, 2.5])
    assert g.alive(2.4) and not g.alive(2.5)


def test_ghost_spawner_adds_separate_groups():
    b = body_from_cell(cube((0.0, 1.0, 0.0), size=0.2))
    traj = StaticTarget(b.position.copy())
    spring = default_spring(b, traj)
    ghosts = spawn_ghosts(0.1, 0.02, 0.5, lifetime=0.05, depths=[0.01])
    spawner = GhostSpawner(ghosts, [b.copy()], [traj])
    s = Scene([b], [spring], config=SimConfig(dt=0.01), effects=[spawner])
    run(s, 12)
    assert len(s.bodies) == 1 + len(ghosts) == 6
    assert sorted({x.group for x in s.bodies}) == list(range(6))
    # the original keeps its spring while the first ghosts erode
    assert s.spring_active(0)
    assert not s.spring_active(1) and not s.spring_active(2)


# ---------------------------------------------------------------------------
# morphing
# ---------------------------------------------------------------------------

def test_proportional_map_examples():
    assert proportional_map(4, 2).tolist() == [0, 0, 1, 1]
    assert proportional_map(2, 2).tolist() == [0, 1]
    assert proportional_map(1, 5).tolist() == [0]


def test_match_two_cells():
    plan = match_cells_for_morph(None, None, source_depths=[0.0, 0.3], target_depths=[0.0, 0.3])
    pairs = dict(zip(plan.source.tolist(), plan.target.tolist()))
    assert pairs == {0: 1, 1: 0}
    assert plan.start[0] <= plan.start[1]


@settings(max_examples=25)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(0, 1000))
def test_match_is_surjection_on_source(n, m, seed):
    rng = np.random.default_rng(seed)
    plan = match_cells_for_morph(None, None, source_depths=rng.uniform(size=n), target_depths=rng.uniform(size=m))
    assert sorted(plan.source.tolist()) == list(range(n))
    assert np.all((plan.target >= 0) & (plan.target < m))
    assert np.all(np.diff(plan.start) >= 0)
    assert np.all(plan.progress(plan.end_time) == 1.0)


def test_match_on_tessellations(sphere_cvt):
    plan = match_cells_for_morph(sphere_cvt, sphere_cvt, start=1.0, duration=0.5, sequence_length=10.0)
    d = centroid_depths(sphere_cvt)
    assert np.all(np.diff(d[plan.source]) >= 0)
    assert np.all(np.diff(d[plan.target]) <= 1e-12)
    with pytest.raises(ValueError):
        match_cells_for_morph(sphere_cvt, sphere_cvt, start=9.8, duration=0.5, sequence_length=10.0)
    with pytest.raises(ValueError):
        MorphPlan([0], [0], [0.0], 0.0)


def _volume(P):
    return polyhedron_moments(P)[0]


def random_cell(seed, scale=0.1):
    rng = np.random.default_rng(seed)
    return convex_hull(scale * rng.normal(size=(20, 3)))


@pytest.mark.parametrize("directions", [None, "icosphere"])
def test_morph_endpoints(directions):
    A, B = random_cell(1), random_cell(2, 0.2)
    Ta = RigidTransform.from_rotvec([0.1, 0.2, 0.3], [1.0, 0.0, 0.0])
    Tb = RigidTransform.from_rotvec([-0.4, 0.0, 0.2], [0.0, 2.0, 0.0])
    m0 = morph_cell(A, Ta, B, Tb, 0.0, directions)
    m1 = morph_cell(A, Ta, B, Tb, 1.0, directions)
    assert _volume(m0.shape) == pytest.approx(_volume(A), rel=1e-2)
    assert _volume(m1.shape) == pytest.approx(_volume(B), rel=1e-2)
    np.testing.assert_allclose(m0.position, Ta.apply(polyhedron_moments(A)[1]), atol=1e-12)
    np.testing.assert_allclose(m1.position, Tb.apply(polyhedron_moments(B)[1]), atol=1e-12)


def test_morph_identical_cells():
    A = random_cell(5)
    for u in (0.0, 0.3, 1.0):
        m = morph_cell(A, None, A, None, u)
        assert _volume(m.shape) == pytest.approx(_volume(A), rel=1e-9)
        np.testing.assert_allclose(np.sort(m.world().vertices, axis=0), np.sort(A.vertices, axis=0), atol=1e-12)


def test_morph_volume_continuous():
    A, B = random_cell(7), box_polyhedron([0.0, 0.0, 0.0], [0.3, 0.1, 0.2])
    us = np.arange(0.0, 1.0 + 1e-12, 1e-3)
    vols = np.array([_volume(morph_cell(A, None, B, None, float(u)).shape) for u in us[::25]])
    fine = np.array([_volume(morph_cell(A, None, B, None, float(u)).shape) for u in us])
    assert np.max(np.abs(np.diff(fine))) <= 0.01 * fine.max()
    assert np.all(vols > 0)
    with pytest.raises(ValueError):
        morph_cell(A, None, B, None, 1.5)
