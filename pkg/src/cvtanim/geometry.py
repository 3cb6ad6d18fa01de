"""Geometric primitives shared by every stage.

Points are plain ``numpy`` arrays of shape ``(3,)`` or ``(n, 3)``.  Rotations
are unit quaternions stored as ``(w, x, y, z)`` with a nonnegative scalar part.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import ConvexHull, QhullError

from .errors import DegenerateInput, NonWatertight

HULL_TOL = 1e-9
PLANE_TOL = 1e-7
COPLANAR_DOT = 1.0 - 1e-12
MIN_VOLUME = 1e-15
MIN_TRIANGLE_AREA = 1e-12


def as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError("non-finite coordinates")
    return pts


# ---------------------------------------------------------------------------
# quaternions
# ---------------------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_mul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w1, x1, y1, z1 = np.moveaxis(a, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(b, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    m = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return m.reshape(m.shape[:-1] + (3, 3))


def quat_from_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_from_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    theta = np.linalg.norm(rv, axis=-1, keepdims=True)
    half = 0.5 * theta
    # sin(x)/x with a series near zero
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    k = np.where(small, 0.5 - theta ** 2 / 48.0, np.sin(half) / safe)
    return np.concatenate([np.cos(half), rv * k], axis=-1)


def quat_to_rotvec(q) -> np.ndarray:
    """Rotation vector (axis * angle) of the shortest-arc rotation ``q``."""
    q = quat_normalize(q)
    w = np.clip(q[..., :1], -1.0, 1.0)
    v = q[..., 1:]
    s = np.linalg.norm(v, axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    small = s < 1e-12
    k = np.where(small, 2.0 / np.where(small, w, 1.0), angle / np.where(small, 1.0, s))
    return v * k


def quat_rotate(q, v) -> np.ndarray:
    return np.asarray(v, dtype=float) @ quat_to_matrix(q).T


def quat_slerp(q0, q1, s: float) -> np.ndarray:
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    d = float(np.dot(q0, q1))
    if d < 0.0:
        q1 = -q1
        d = -d
    if d > 1.0 - 1e-12:
        return quat_normalize(q0 + s * (q1 - q0))
    theta = np.arccos(min(d, 1.0))
    a = np.sin((1.0 - s) * theta) / np.sin(theta)
    b = np.sin(s * theta) / np.sin(theta)
    return quat_normalize(a * q0 + b * q1)


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


# ---------------------------------------------------------------------------
# rigid transforms
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rotation followed by translation: ``p -> R p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.rotation, dtype=float).reshape(4))
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("non-finite rigid transform")
        q.setflags(write=False)
        t = t.copy()
        t.setflags(write=False)
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_translation(cls, t) -> RigidTransform:
        return cls(translation=t)

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(quat_from_rotvec(rotvec), translation)

    @classmethod
    def from_matrix(cls, R, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(quat_from_matrix(R), translation)

    @classmethod
    def about_point(cls, rotvec, center) -> RigidTransform:
        """Rotation by ``rotvec`` that keeps ``center`` fixed."""
        q = quat_from_rotvec(rotvec)
        c = np.asarray(center, dtype=float)
        return cls(q, c - quat_rotate(q, c))

    @property
    def matrix(self) -> np.ndarray:
        m = self.__dict__.get("_matrix")
        if m is None:
            m = quat_to_matrix(self.rotation)
            m.setflags(write=False)
            object.__setattr__(self, "_matrix", m)
        return m

    def homogeneous(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.matrix
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return p @ self.matrix.T + self.translation

    def apply_vector(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=float) @ self.matrix.T

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        q = quat_mul(self.rotation, other.rotation)
        t = quat_rotate(self.rotation, other.translation) + self.translation
        return RigidTransform(q, t)

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        qi = quat_conj(self.rotation)
        return RigidTransform(qi, -quat_rotate(qi, self.translation))

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.rotation)

    def angle(self) -> float:
        return float(np.linalg.norm(self.rotvec()))

    def to_list(self) -> list[float]:
        return [float(v) for v in self.rotation] + [float(v) for v in self.translation]

    @classmethod
    def from_list(cls, values) -> RigidTransform:
        values = list(values)
        return cls(values[:4], values[4:7])

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )


def rigid_interpolate(T0: RigidTransform, T1: RigidTransform, s: float) -> RigidTransform:
    """Linear translation, shortest-arc slerp rotation; endpoints are exact."""
    if not 0.0 <= s <= 1.0:
        raise ValueError("interpolation parameter must lie in [0, 1]")
    if s == 0.0:
        return T0
    if s == 1.0:
        return T1
    t = (1.0 - s) * T0.translation + s * T1.translation
    return RigidTransform(quat_slerp(T0.rotation, T1.rotation, s), t)


def se3_exp(xi) -> RigidTransform:
    """Left increment from a 6-vector ``(rotation vector, translation)``."""
    xi = np.asarray(xi, dtype=float)
    return RigidTransform(quat_from_rotvec(xi[:3]), xi[3:6])


# ---------------------------------------------------------------------------
# convex polyhedra
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConvexPolyhedron:
    """Closed convex polyhedron with planar polygon faces.

    ``faces`` are vertex index arrays ordered counter-clockwise seen from
    outside.  ``face_labels`` optionally tags each face (for Voronoi cells the
    index of the neighbouring site, negative for bounding/surface faces).
    """

    vertices: np.ndarray
    faces: tuple
    face_labels: np.ndarray | None = None

    def __post_init__(self):
        v = as_points(self.vertices).copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", tuple(np.asarray(f, dtype=np.int64) for f in self.faces))
        if self.face_labels is not None:
            lab = np.asarray(self.face_labels, dtype=np.int64).copy()
            if lab.shape != (len(self.faces),):
                raise ValueError("one label per face required")
            lab.setflags(write=False)
            object.__setattr__(self, "face_labels", lab)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def diameter(self) -> float:
        cached = self.__dict__.get("_diameter")
        if cached is None:
            lo, hi = self.vertices.min(0), self.vertices.max(0)
            cached = float(np.linalg.norm(hi - lo))
            object.__setattr__(self, "_diameter", cached)
        return cached

    def triangles(self) -> tuple[np.ndarray, np.ndarray]:
        """Fan triangulation; returns ``(tri, owner_face)``."""
        cached = self.__dict__.get("_tri_cache")
        if cached is not None:
            return cached
        lengths = np.array([len(f) for f in self.faces], dtype=np.int64)
        tris, owner = [], []
        for m in np.unique(lengths):
            if m < 3:
                continue
            ks = np.nonzero(lengths == m)[0]
            F = np.array([self.faces[k] for k in ks], dtype=np.int64).reshape(len(ks), m)
            j = np.arange(1, m - 1)
            t = np.stack([np.repeat(F[:, :1], m - 2, axis=1), F[:, j], F[:, j + 1]], axis=2)
            tris.append(t.reshape(-1, 3))
            owner.append(np.repeat(ks, m - 2))
        if not tris:
            out = np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
        else:
            tri, own = np.concatenate(tris), np.concatenate(owner)
            order = np.argsort(own, kind="stable")
            out = tri[order], own[order]
        object.__setattr__(self, "_tri_cache", out)
        return out

    def _face_vector_areas(self) -> np.ndarray:
        tri, owner = self.triangles()
        v = self.vertices
        cr = np.cross(v[tri[:, 1]] - v[tri[:, 0]], v[tri[:, 2]] - v[tri[:, 0]])
        out = np.zeros((self.n_faces, 3))
        np.add.at(out, owner, 0.5 * cr)
        return out

    def face_normals(self) -> np.ndarray:
        va = self._face_vector_areas()
        return va / np.maximum(np.linalg.norm(va, axis=1, keepdims=True), 1e-300)

    def face_areas(self) -> np.ndarray:
        return np.linalg.norm(self._face_vector_areas(), axis=1)

    def face_centroids(self) -> np.ndarray:
        tri, owner = self.triangles()
        counts = np.array([len(f) for f in self.faces], dtype=float)
        out = np.zeros((self.n_faces, 3))
        # every face vertex appears once as a fan corner, except the apex and the last
        first = np.r_[True, owner[1:] != owner[:-1]]
        np.add.at(out, owner[first], self.vertices[tri[first, 0]])
        np.add.at(out, owner, self.vertices[tri[:, 1]])
        last = np.r_[owner[1:] != owner[:-1], True]
        np.add.at(out, owner[last], self.vertices[tri[last, 2]])
        return out / counts[:, None]

    def planes(self) -> tuple[np.ndarray, np.ndarray]:
        """Outward unit normals and offsets with ``n·x <= d`` inside."""
        cached = self.__dict__.get("_plane_cache")
        if cached is not None:
            return cached
        n = self.face_normals()
        out = (n, np.einsum("ij,ij->i", n, self.face_centroids()))
        object.__setattr__(self, "_plane_cache", out)
        return out

    def transformed(self, T: RigidTransform) -> ConvexPolyhedron:
        """The polyhedron mapped by ``T``; cached plane data is carried over."""
        R, t = T.matrix, T.translation
        out = ConvexPolyhedron(self.vertices @ R.T + t, self.faces, self.face_labels)
        n, d = self.planes()
        nw = n @ R.T
        object.__setattr__(out, "_plane_cache", (nw, d + nw @ t))
        if "_tri_cache" in self.__dict__:
            object.__setattr__(out, "_tri_cache", self.__dict__["_tri_cache"])
        return out

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        n, d = self.planes()
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return np.all(p @ n.T <= d + tol * max(self.diameter, 1e-300), axis=1)

    def edges(self) -> np.ndarray:
        e = set()
        for f in self.faces:
            for a, b in zip(f, np.roll(f, -1)):
                e.add((min(a, b), max(a, b)))
        return np.array(sorted(e), dtype=np.int64).reshape(-1, 2)

    def volume_centroid(self) -> tuple[float, np.ndarray]:
        return polyhedron_volume_centroid(self)

    def moments(self) -> tuple[float, np.ndarray, np.ndarray]:
        return polyhedron_moments(self)

    def translated(self, t) -> ConvexPolyhedron:
        return ConvexPolyhedron(self.vertices + np.asarray(t, dtype=float), self.faces, self.face_labels)

    def scaled(self, factor: float, center=None) -> ConvexPolyhedron:
        c = self.volume_centroid()[1] if center is None else np.asarray(center, dtype=float)
        return ConvexPolyhedron(c + factor * (self.vertices - c), self.faces, self.face_labels)

    def support(self, direction) -> np.ndarray:
        d = np.asarray(direction, dtype=float)
        return self.vertices[int(np.argmax(self.vertices @ d))]


def _merge_coplanar(hull: ConvexHull, tol_dist: float) -> list[np.ndarray]:
    """Group qhull triangles into coplanar connected patches."""
    eq = hull.equations
    ns = len(hull.simplices)
    rows, cols = [], []
    for j in range(3):
        nb = hull.neighbors[:, j]
        same = (np.einsum("ij,ij->i", eq[:, :3], eq[nb, :3]) > COPLANAR_DOT) & (
            np.abs(eq[:, 3] - eq[nb, 3]) < tol_dist
        )
        rows.append(np.nonzero(same)[0])
        cols.append(nb[same])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r)), (r, c)), shape=(ns, ns))
    _, label = connected_components(graph, directed=False)
    order = np.argsort(label, kind="stable")
    splits = np.nonzero(np.diff(label[order]))[0] + 1
    return np.split(order, splits)


def _order_face(points: np.ndarray, ids: np.ndarray, normal: np.ndarray) -> np.ndarray:
    p = points[ids]
    c = p.mean(0)
    u = p[0] - c
    if np.linalg.norm(u) < 1e-300:
        u = np.cross(normal, [1.0, 0.0, 0.0])
        if np.linalg.norm(u) < 1e-6:
            u = np.cross(normal, [0.0, 1.0, 0.0])
    u = u / np.linalg.norm(u)
    w = np.cross(normal, u)
    ang = np.arctan2((p - c) @ w, (p - c) @ u)
    return ids[np.argsort(ang, kind="stable")]


def convex_hull(points, qhull_options: str | None = None) -> ConvexPolyhedron:
    """Minimal convex polyhedron enclosing ``points`` (polygonal faces).

    Raises DegenerateInput when the points do not span 3D.
    """
    pts = as_points(points)
    if len(pts) < 4:
        raise DegenerateInput("need at least 4 points for a 3D hull")
    try:
        hull = ConvexHull(pts, qhull_options=qhull_options)
    except QhullError as exc:
        raise DegenerateInput(f"points are not affinely independent: {exc}") from None
    diam = float(np.linalg.norm(pts.max(0) - pts.min(0)))
    if hull.volume <= MIN_VOLUME * max(diam, 1.0) ** 3:
        raise DegenerateInput("hull has no volume")
    used = np.unique(hull.simplices)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    verts = pts[used]
    groups = _merge_coplanar(hull, HULL_TOL * max(diam, 1e-300))
    faces: list = [None] * len(groups)
    single = np.array([len(g) == 1 for g in groups], dtype=bool)
    if np.any(single):
        ks = np.nonzero(single)[0]
        simp = np.array([groups[k][0] for k in ks], dtype=np.int64)
        tri = hull.simplices[simp]
        a, b, c = pts[tri[:, 0]], pts[tri[:, 1]], pts[tri[:, 2]]
        flip = np.einsum("ij,ij->i", np.cross(b - a, c - a), hull.equations[simp, :3]) < 0
        tri[flip] = tri[flip][:, ::-1]
        tri = remap[tri]
        for k, t in zip(ks, tri):
            faces[k] = t
    for k in np.nonzero(~single)[0]:
        group = groups[k]
        ids = np.unique(hull.simplices[group])
        normal = hull.equations[group[0], :3]
        faces[k] = remap[_order_face(pts, ids, normal)]
    return ConvexPolyhedron(verts, tuple(faces))


def chebyshev_center(normals, offsets) -> tuple[np.ndarray, float]:
    """Centre and radius of the largest ball inside ``n·x <= d``."""
    from scipy.optimize import linprog

    n = np.asarray(normals, dtype=float)
    d = np.asarray(offsets, dtype=float)
    norm = np.linalg.norm(n, axis=1)
    A = np.hstack([n, norm[:, None]])
    res = linprog(np.array([0.0, 0.0, 0.0, -1.0]), A_ub=A, b_ub=d,
                  bounds=[(None, None)] * 3 + [(0.0, None)], method="highs")
    if res.status != 0:
        raise DegenerateInput(f"half-space system has no bounded interior ({res.message})")
    return res.x[:3], float(res.x[3])


def label_faces(P: ConvexPolyhedron, normals, offsets, labels, default: int = -1,
                tol: float = 1e-7) -> np.ndarray:
    """Label each face of ``P`` with the label of the plane it lies on."""
    fn, fd = P.planes()
    n = np.asarray(normals, dtype=float)
    s = np.linalg.norm(n, axis=1)
    n = n / s[:, None]
    d = np.asarray(offsets, dtype=float) / s
    labels = np.asarray(labels, dtype=np.int64)
    scale = max(P.diameter, 1e-300)
    out = np.full(P.n_faces, default, dtype=np.int64)
    if len(n) == 0:
        return out
    dots = fn @ n.T
    gap = np.abs(fd[:, None] - d[None, :]) / scale
    score = np.where(dots > 1.0 - 1e-6, gap, np.inf)
    best = np.argmin(score, axis=1)
    ok = score[np.arange(P.n_faces), best] < tol
    out[ok] = labels[best[ok]]
    return out


def halfspace_polyhedron(normals, offsets, labels=None, interior=None,
                         default_label: int = -1) -> ConvexPolyhedron:
    """Bounded intersection of ``n·x <= d`` with faces labelled by their plane."""
    from scipy.spatial import HalfspaceIntersection

    n = np.asarray(normals, dtype=float).reshape(-1, 3)
    d = np.asarray(offsets, dtype=float).reshape(-1)
    if interior is None:
        interior, r = chebyshev_center(n, d)
        if r <= 1e-12 * max(1.0, float(np.abs(d).max())):
            raise DegenerateInput("half-space intersection is empty or flat")
    try:
        hs = HalfspaceIntersection(np.hstack([n, -d[:, None]]), np.asarray(interior, dtype=float))
    except QhullError as exc:
        raise DegenerateInput(f"half-space intersection failed: {exc}") from None
    P = convex_hull(hs.intersections)
    if labels is None:
        labels = np.arange(len(n))
    lab = label_faces(P, n, d, labels, default=default_label)
    return ConvexPolyhedron(P.vertices, P.faces, lab)


def clip_polyhedron(P: ConvexPolyhedron, normals, offsets, labels, interior=None) -> ConvexPolyhedron:
    """Intersect ``P`` with extra half-spaces, keeping existing face labels."""
    pn, pd = P.planes()
    plab = P.face_labels if P.face_labels is not None else np.full(P.n_faces, -1)
    n = np.vstack([pn, np.asarray(normals, dtype=float).reshape(-1, 3)])
    d = np.concatenate([pd, np.asarray(offsets, dtype=float).reshape(-1)])
    lab = np.concatenate([plab, np.asarray(labels, dtype=np.int64).reshape(-1)])
    return halfspace_polyhedron(n, d, lab, interior=interior)


def _tet_fan(P: ConvexPolyhedron, origin: np.ndarray):
    tri, _ = P.triangles()
    v = P.vertices - origin
    a, b, c = v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
    vol = np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
    return a, b, c, vol


def polyhedron_moments(P: ConvexPolyhedron) -> tuple[float, np.ndarray, np.ndarray]:
    """Volume, centroid and second-moment matrix ``∫(x-c)(x-c)^T dx`` (unit density)."""
    origin = P.vertices.mean(0)
    a, b, c, vol = _tet_fan(P, origin)
    V = float(vol.sum())
    if V < MIN_VOLUME:
        raise DegenerateInput(f"polyhedron volume {V:g} below {MIN_VOLUME:g}")
    s = a + b + c
    m1 = (vol[:, None] * s).sum(0) / 4.0
    rel = m1 / V
    # ∫ x x^T over tet (0,a,b,c) = vol/20 (aa^T + bb^T + cc^T + ss^T)
    outer = (
        np.einsum("i,ij,ik->jk", vol, a, a)
        + np.einsum("i,ij,ik->jk", vol, b, b)
        + np.einsum("i,ij,ik->jk", vol, c, c)
        + np.einsum("i,ij,ik->jk", vol, s, s)
    ) / 20.0
    cov = outer - V * np.outer(rel, rel)
    return V, origin + rel, 0.5 * (cov + cov.T)


def polyhedron_volume_centroid(P: ConvexPolyhedron) -> tuple[float, np.ndarray]:
    origin = P.vertices.mean(0)
    a, b, c, vol = _tet_fan(P, origin)
    V = float(vol.sum())
    if V < MIN_VOLUME:
        raise DegenerateInput(f"polyhedron volume {V:g} below {MIN_VOLUME:g}")
    rel = (vol[:, None] * (a + b + c)).sum(0) / (4.0 * V)
    return V, origin + rel


def box_polyhedron(lo, hi) -> ConvexPolyhedron:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    corners = np.array([[hi[0] if i & 1 else lo[0], hi[1] if i & 2 else lo[1], hi[2] if i & 4 else lo[2]]
                        for i in range(8)])
    faces = (
        [0, 4, 6, 2], [1, 3, 7, 5],  # -x, +x
        [0, 1, 5, 4], [2, 6, 7, 3],  # -y, +y
        [0, 2, 3, 1], [4, 5, 7, 6],  # -z, +z
    )
    return ConvexPolyhedron(corners, faces)


# ---------------------------------------------------------------------------
# triangle meshes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        v = as_points(self.vertices).copy()
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3).copy()
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        area = 0.5 * np.linalg.norm(np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1)
        if np.any(area <= MIN_TRIANGLE_AREA):
            raise ValueError("degenerate triangle in mesh")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

    @property
    def corners(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v, t = self.vertices, self.triangles
        return v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def normals(self) -> np.ndarray:
        a, b, c = self.corners
        n = np.cross(b - a, c - a)
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def volume(self) -> float:
        a, b, c = self.corners
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    @classmethod
    def from_polyhedron(cls, P: ConvexPolyhedron) -> TriangleMesh:
        tri, _ = P.triangles()
        return cls(P.vertices, tri)


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere; subdivision 2 has 162 vertices."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriangleMesh(np.asarray(center, dtype=float) + radius * np.array(verts), np.array(faces))


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest points, elementwise over broadcast arrays of shape ``(..., 3)``."""
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("...i,...i", ab, ap)
    d2 = np.einsum("...i,...i", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i", ab, bp)
    d4 = np.einsum("...i,...i", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i", ab, cp)
    d6 = np.einsum("...i,...i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    denom = va + vb + vc
    denom = np.where(np.abs(denom) < 1e-300, 1e-300, denom)
    v = vb / denom
    w = vc / denom
    out = a + ab * v[..., None] + ac * w[..., None]

    def put(mask, value):
        nonlocal out
        out = np.where(mask[..., None], value, out)

    # edge regions, then vertex regions (later assignments win)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        put((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0), b + (c - b) * np.nan_to_num(t_bc)[..., None])
        t_ac = d2 / (d2 - d6)
        put((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + ac * np.nan_to_num(t_ac)[..., None])
        t_ab = d1 / (d1 - d3)
        put((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + ab * np.nan_to_num(t_ab)[..., None])
    put((d6 >= 0) & (d5 <= d6), c)
    put((d3 >= 0) & (d4 <= d3), b)
    put((d1 <= 0) & (d2 <= 0), a)
    return out


def _ray_hits(points: np.ndarray, direction: np.ndarray, a, b, c, eps: float):
    """Möller-Trumbore against all triangles.

    Returns ``(count, on_surface, ambiguous)`` per point.
    """
    e1 = b - a
    e2 = c - a
    h = np.cross(direction, e2)
    det = np.einsum("ij,ij->i", e1, h)
    ok = np.abs(det) > 1e-14 * (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
    e1, e2, h, det, a = e1[ok], e2[ok], h[ok], det[ok], a[ok]
    inv = 1.0 / det
    s = points[:, None, :] - a[None, :, :]
    u = np.einsum("ntj,tj->nt", s, h) * inv
    q = np.cross(s, e1[None, :, :])
    v = (q @ direction) * inv
    t = np.einsum("ntj,tj->nt", q, e2) * inv
    bary_eps = 1e-9
    inside = (u >= -bary_eps) & (v >= -bary_eps) & (u + v <= 1 + bary_eps)
    strict = (u > bary_eps) & (v > bary_eps) & (u + v < 1 - bary_eps)
    on_surface = np.any(inside & (np.abs(t) <= eps), axis=1)
    hit = inside & (t > eps)
    ambiguous = np.any(hit & ~strict, axis=1)
    return hit.sum(axis=1), on_surface, ambiguous


_RAY_DIRECTIONS = np.array([
    [0.5773502691896257, 0.5773502691896258, 0.5773502691896258],
    [0.2672612419124244, -0.5345224838248488, 0.8017837257372732],
    [-0.7071067811865475, 0.1, 0.7],
    [0.123, 0.987, -0.1015],
    [-0.31, -0.42, -0.853],
])
_RAY_DIRECTIONS = _RAY_DIRECTIONS / np.linalg.norm(_RAY_DIRECTIONS, axis=1, keepdims=True)


def mesh_inside(mesh: TriangleMesh, points, chunk: int = 256) -> np.ndarray:
    """Vectorised parity test; points on the surface count as inside.

    Every point is classified with two independent ray directions; points
    whose rays graze edges or vertices move on to further directions.  A
    point whose parities still disagree raises NonWatertight.
    """
    pts = as_points(points)
    a, b, c = mesh.corners
    eps = 1e-12 * max(mesh.diameter, 1.0)
    out = np.zeros(len(pts), dtype=bool)
    for start in range(0, len(pts), chunk):
        p = pts[start:start + chunk]
        votes: list[np.ndarray] = []
        valid: list[np.ndarray] = []
        surface = np.zeros(len(p), dtype=bool)
        for d in _RAY_DIRECTIONS:
            cnt, on, amb = _ray_hits(p, d, a, b, c, eps)
            surface |= on
            votes.append(cnt % 2 == 1)
            valid.append(~amb)
            if len(votes) >= 2:
                V = np.array(votes)
                W = np.array(valid)
                n_ok = W.sum(0)
                n_in = (V & W).sum(0)
                settled = (n_ok >= 2) & ((n_in == 0) | (n_in == n_ok))
                if np.all(settled | surface):
                    break
        V = np.array(votes)
        W = np.array(valid)
        n_ok = W.sum(0)
        n_in = (V & W).sum(0)
        undecided = ~surface & ((n_ok < 2) | ((n_in != 0) & (n_in != n_ok)))
        if np.any(undecided):
            raise NonWatertight(f"ray parity inconsistent for {int(undecided.sum())} point(s)")
        result = surface | ((n_in == n_ok) & (n_in > 0))
        out[start:start + chunk] = result
    return out


def mesh_inside_test(mesh: TriangleMesh, p) -> bool:
    return bool(mesh_inside(mesh, np.asarray(p, dtype=float).reshape(1, 3))[0])


def point_mesh_distance(points, mesh: TriangleMesh, chunk: int = 512) -> np.ndarray:
    """Unsigned distance from each point to the nearest mesh triangle."""
    return TriangleSet(*mesh.corners).distance(points, chunk=chunk)


class TriangleSet:
    """Point-to-triangle-soup distance queries accelerated with a KD-tree."""

    def __init__(self, a, b, c):
        from scipy.spatial import cKDTree

        self.a = np.asarray(a, dtype=float).reshape(-1, 3)
        self.b = np.asarray(b, dtype=float).reshape(-1, 3)
        self.c = np.asarray(c, dtype=float).reshape(-1, 3)
        if len(self.a) == 0:
            raise ValueError("empty triangle set")
        self.centroids = (self.a + self.b + self.c) / 3.0
        self.radius = np.max(np.linalg.norm(
            np.stack([self.a, self.b, self.c]) - self.centroids[None], axis=2))
        self.tree = cKDTree(self.centroids)

    def distance(self, points, chunk: int = 512, return_closest: bool = False):
        pts = as_points(points)
        d0, _ = self.tree.query(pts)
        dist = np.empty(len(pts))
        closest = np.empty_like(pts)
        # exact: any triangle closer than d0 has its centroid within d0 + radius
        cand = self.tree.query_ball_point(pts, d0 + self.radius + 1e-12)
        for start in range(0, len(pts), chunk):
            sl = range(start, min(start + chunk, len(pts)))
            lens = np.array([len(cand[i]) for i in sl])
            idx = np.concatenate([np.asarray(cand[i], dtype=np.int64) for i in sl])
            owner = np.repeat(np.arange(len(lens)), lens)
            p = pts[start:start + len(lens)][owner]
            q = closest_point_on_triangles(p, self.a[idx], self.b[idx], self.c[idx])
            dd = np.linalg.norm(p - q, axis=1)
            order = np.lexsort((dd, owner))
            first = np.searchsorted(owner[order], np.arange(len(lens)))
            best = order[first]
            dist[start:start + len(lens)] = dd[best]
            closest[start:start + len(lens)] = q[best]
        if return_closest:
            return dist, closest
        return dist


# ---------------------------------------------------------------------------
# point clouds
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class OrientedPointCloud:
    points: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        p = as_points(self.points).copy() if len(np.asarray(self.points)) else np.zeros((0, 3))
        n = np.asarray(self.normals, dtype=float).reshape(-1, 3).copy()
        if len(p) != len(n):
            raise ValueError("points and normals must have equal length")
        if len(n) and np.any(np.abs(np.linalg.norm(n, axis=1) - 1.0) > 1e-6):
            raise ValueError("normals must be unit length")
        p.setflags(write=False)
        n.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.points)


def fibonacci_directions(n: int) -> np.ndarray:
    i = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * i / n)
    theta = np.pi * (1.0 + 5 ** 0.5) * i
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)
