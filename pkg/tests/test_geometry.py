from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cvtanim.errors import DegenerateInput
from cvtanim.geometry import (
    ConvexPolyhedron,
    OrientedPointCloud,
    RigidTransform,
    TriangleMesh,
    box_polyhedron,
    closest_point_on_triangles,
    convex_hull,
    icosphere,
    mesh_inside,
    mesh_inside_test,
    polyhedron_moments,
    polyhedron_volume_centroid,
    quat_from_rotvec,
    rigid_interpolate,
    se3_exp,
)
from oracles import brute_distance_to_triangle, monte_carlo_moments

CUBE = np.array([[x, y, z] for x in (0.0, 1.0) for y in (0.0, 1.0) for z in (0.0, 1.0)])

finite = st.floats(-5.0, 5.0, allow_nan=False)
vec3 = arrays(np.float64, 3, elements=finite)
rotvec = arrays(np.float64, 3, elements=st.floats(-3.0, 3.0))


def transforms():
    return st.builds(RigidTransform.from_rotvec, rotvec, vec3)


def random_hull(seed: int, n: int = 20) -> ConvexPolyhedron:
    rng = np.random.default_rng(seed)
    return convex_hull(rng.normal(size=(n, 3)) * rng.uniform(0.5, 2.0, size=3))


# convex_hull -------------------------------------------------------------

def test_hull_of_cube_is_cube():
    P = convex_hull(CUBE)
    vol, c = polyhedron_volume_centroid(P)
    assert vol == pytest.approx(1.0, abs=1e-12)
    assert len(P.vertices) == 8
    assert np.allclose(c, 0.5)


def test_hull_discards_interior_point():
    P = convex_hull(np.vstack([CUBE, [[0.5, 0.5, 0.5]]]))
    assert len(P.vertices) == 8
    assert polyhedron_volume_centroid(P)[0] == pytest.approx(1.0, abs=1e-12)


def test_regular_tetrahedron_volume():
    a = 1.0
    pts = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float) * a / (2 * np.sqrt(2))
    # edge length of this tetrahedron is 1; determinant formula gives the reference
    ref = abs(np.linalg.det(pts[1:] - pts[0])) / 6.0
    assert ref == pytest.approx(1.0 / (6.0 * np.sqrt(2.0)), rel=1e-12)
    assert polyhedron_volume_centroid(convex_hull(pts))[0] == pytest.approx(ref, rel=1e-12)


def test_hull_rejects_coplanar():
    pts = np.c_[np.random.default_rng(0).normal(size=(10, 2)), np.zeros(10)]
    with pytest.raises(DegenerateInput):
        convex_hull(pts)


@given(st.integers(0, 10_000))
def test_hull_contains_inputs_and_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(30, 3))
    P = convex_hull(pts)
    n, d = P.planes()
    assert np.all(pts @ n.T <= d + 1e-9 * P.diameter)
    again = convex_hull(P.vertices)
    assert polyhedron_volume_centroid(again)[0] == pytest.approx(polyhedron_volume_centroid(P)[0], abs=1e-9)


@given(st.integers(0, 10_000))
def test_hull_vertices_on_or_inside_every_face_plane(seed):
    P = random_hull(seed)
    n, d = P.planes()
    assert np.all(P.vertices @ n.T <= d + 1e-7 * P.diameter)
    edges = P.edges()
    # closed 2-manifold: Euler characteristic of a sphere
    assert len(P.vertices) - len(edges) + P.n_faces == 2


# volume and centroid -----------------------------------------------------

def test_unit_cube_moments():
    vol, c = polyhedron_volume_centroid(box_polyhedron([0, 0, 0], [1, 1, 1]))
    assert vol == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(c, 0.5, atol=1e-14)


def test_scaled_cube():
    vol, c = polyhedron_volume_centroid(box_polyhedron([0, 0, 0], [2, 2, 2]))
    assert vol == pytest.approx(8.0, abs=1e-12)
    assert np.allclose(c, 1.0, atol=1e-14)


def test_corner_tetrahedron():
    P = convex_hull(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float))
    vol, c = polyhedron_volume_centroid(P)
    assert vol == pytest.approx(1.0 / 6.0, abs=1e-14)
    assert np.allclose(c, 0.25, atol=1e-14)


def test_degenerate_volume_raises():
    flat = ConvexPolyhedron(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1e-20]], float),
                            ([0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]))
    with pytest.raises(DegenerateInput):
        polyhedron_volume_centroid(flat)


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_second_moments_match_monte_carlo(seed):
    P = random_hull(seed)
    vol, c, C = polyhedron_moments(P)
    mvol, mc, mC = monte_carlo_moments(P, 400_000, seed)
    assert vol == pytest.approx(mvol, rel=0.01)
    assert np.linalg.norm(c - mc) < 0.01 * P.diameter
    assert np.linalg.norm(C - mC) < 0.02 * np.linalg.norm(C)


@given(st.integers(0, 10_000), vec3)
def test_centroid_translation_equivariance(seed, t):
    P = random_hull(seed, 12)
    c0 = polyhedron_volume_centroid(P)[1]
    c1 = polyhedron_volume_centroid(P.translated(t))[1]
    assert np.linalg.norm(c1 - (c0 + t)) <= 1e-12 * max(np.linalg.norm(t), 1.0) * 10


@given(st.integers(0, 10_000))
def test_centroid_strictly_inside(seed):
    P = random_hull(seed, 8)
    c = polyhedron_volume_centroid(P)[1]
    n, d = P.planes()
    assert np.all(c @ n.T < d)


# rigid transforms --------------------------------------------------------

@given(transforms(), transforms(), transforms(), arrays(np.float64, (5, 3), elements=finite))
def test_composition_associative(A, B, C, p):
    lhs = ((A @ B) @ C).apply(p)
    rhs = (A @ (B @ C)).apply(p)
    assert np.allclose(lhs, rhs, atol=1e-9)


@given(transforms(), arrays(np.float64, (5, 3), elements=finite))
def test_inverse_is_identity(T, p):
    assert np.allclose(T.inverse().compose(T).apply(p), p, atol=1e-9)
    assert abs(np.linalg.norm(T.rotation) - 1.0) < 1e-9


def test_interpolate_endpoints_and_midpoints():
    T0 = RigidTransform.identity()
    T1 = RigidTransform.from_translation([2.0, 0.0, 0.0])
    assert rigid_interpolate(T0, T1, 0.0).allclose(T0)
    assert rigid_interpolate(T0, T1, 1.0).allclose(T1)
    assert np.allclose(rigid_interpolate(T0, T1, 0.5).translation, [1.0, 0.0, 0.0])
    R1 = RigidTransform.from_rotvec([0.0, 0.0, np.pi / 2])
    mid = rigid_interpolate(T0, R1, 0.5)
    assert np.allclose(mid.rotvec(), [0.0, 0.0, np.pi / 4], atol=1e-12)


def test_interpolate_takes_shortest_arc():
    a = RigidTransform(quat_from_rotvec([0.0, 0.0, 0.1]))
    b = RigidTransform(-quat_from_rotvec([0.0, 0.0, 0.3]))
    mid = rigid_interpolate(a, b, 0.5)
    assert np.allclose(mid.rotvec(), [0.0, 0.0, 0.2], atol=1e-12)


def test_interpolate_rejects_out_of_range():
    with pytest.raises(ValueError):
        rigid_interpolate(RigidTransform.identity(), RigidTransform.identity(), 1.5)


def test_se3_exp_small_rotation():
    T = se3_exp(np.r_[0.0, 0.0, 1e-12, 1.0, 2.0, 3.0])
    assert np.allclose(T.translation, [1.0, 2.0, 3.0])


# meshes ------------------------------------------------------------------

def cube_mesh() -> TriangleMesh:
    return TriangleMesh.from_polyhedron(box_polyhedron([0, 0, 0], [1, 1, 1]))


def test_mesh_inside_examples():
    m = cube_mesh()
    assert mesh_inside_test(m, [0.5, 0.5, 0.5])
    assert not mesh_inside_test(m, [2.0, 0.0, 0.0])
    assert mesh_inside_test(m, [0.5, 0.5, 1.0])
    assert mesh_inside_test(m, [0.0, 0.0, 0.0])


def test_mesh_inside_agrees_with_sphere():
    mesh = icosphere(4)
    rng = np.random.default_rng(5)
    p = rng.uniform(-1.2, 1.2, size=(1000, 3))
    r = np.linalg.norm(p, axis=1)
    inside = mesh_inside(mesh, p)
    agree = inside == (r <= 1.0)
    assert agree.mean() >= 0.995
    # sagitta of the coarsest facet bounds every disagreement
    edge = np.max(np.linalg.norm(mesh.vertices[mesh.triangles[:, 0]] - mesh.vertices[mesh.triangles[:, 1]], axis=1))
    sagitta = 1.0 - np.sqrt(1.0 - (edge / np.sqrt(3.0)) ** 2)
    assert np.all(np.abs(r[~agree] - 1.0) <= sagitta)


def test_mesh_volume_of_cube():
    assert cube_mesh().volume() == pytest.approx(1.0, abs=1e-12)


def test_degenerate_triangle_rejected():
    with pytest.raises(ValueError):
        TriangleMesh(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]], float), np.array([[0, 1, 2]]))


@given(st.integers(0, 10_000))
def test_closest_point_on_triangle_matches_sampling(seed):
    rng = np.random.default_rng(seed)
    a, b, c, p = rng.normal(size=(4, 3))
    q = closest_point_on_triangles(p[None], a[None], b[None], c[None])[0]
    brute = brute_distance_to_triangle(p, a, b, c, n=300)
    d = float(np.linalg.norm(q - p))
    assert d <= brute + 1e-12
    assert brute - d <= 0.02 * max(np.linalg.norm(b - a), np.linalg.norm(c - a))


def test_point_cloud_validates_normals():
    with pytest.raises(ValueError):
        OrientedPointCloud(np.zeros((2, 3)), np.array([[1.0, 0, 0], [0.5, 0, 0]]))
    with pytest.raises(ValueError):
        OrientedPointCloud(np.zeros((2, 3)), np.array([[1.0, 0, 0]]))
