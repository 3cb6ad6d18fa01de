"""Broad phase (AABB tree), GJK distance, EPA penetration and contact manifolds."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from ..errors import MaxIterations
from ..geometry import ConvexPolyhedron, RigidTransform

GJK_MAX_ITER = 64
EPA_MAX_ITER = 128
MANIFOLD_POINTS = 4


@dataclass(frozen=True, eq=False)
class Contact:
    """Contact between bodies ``a`` and ``b``; ``normal`` points from b to a.

    ``b = -1`` denotes the static ground.  ``feature`` identifies the
    contact point across steps for warm starting.
    """

    a: int
    b: int
    point: np.ndarray
    normal: np.ndarray
    depth: float
    feature: tuple = ()


@dataclass(frozen=True, eq=False)
class GroundPlane:
    """Static half-space ``y <= height`` (solid below), normal +y."""

    height: float = 0.0

    @property
    def normal(self) -> np.ndarray:
        return np.array([0.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# broad phase
# ---------------------------------------------------------------------------

class _Node:
    __slots__ = ("lo", "hi", "left", "right", "items")

    def __init__(self, lo, hi, left=None, right=None, items=None):
        self.lo, self.hi, self.left, self.right, self.items = lo, hi, left, right, items


def _build(lo: np.ndarray, hi: np.ndarray, ids: np.ndarray, leaf: int) -> _Node:
    blo, bhi = lo[ids].min(0), hi[ids].max(0)
    if len(ids) <= leaf:
        return _Node(blo, bhi, items=ids)
    c = 0.5 * (lo[ids] + hi[ids])
    axis = int(np.argmax(bhi - blo))
    order = ids[np.argsort(c[:, axis], kind="stable")]
    mid = len(order) // 2
    return _Node(blo, bhi, _build(lo, hi, order[:mid], leaf), _build(lo, hi, order[mid:], leaf))


def _overlap(a: _Node, b: _Node) -> bool:
    return bool(np.all(a.lo <= b.hi) and np.all(b.lo <= a.hi))


class AABBTree:
    """Static top-down AABB tree (median split on the longest axis)."""

    def __init__(self, lo, hi, leaf_size: int = 4):
        self.lo = np.asarray(lo, dtype=float).reshape(-1, 3)
        self.hi = np.asarray(hi, dtype=float).reshape(-1, 3)
        self.root = _build(self.lo, self.hi, np.arange(len(self.lo)), leaf_size) if len(self.lo) else None

    def _leaf_pairs(self, a: _Node, b: _Node, out: set) -> None:
        I, J = a.items, b.items
        ok = (np.all(self.lo[I][:, None] <= self.hi[J][None], axis=2)
              & np.all(self.lo[J][None] <= self.hi[I][:, None], axis=2))
        for i, j in zip(I[np.nonzero(ok)[0]].tolist(), J[np.nonzero(ok)[1]].tolist()):
            if i != j:
                out.add((min(i, j), max(i, j)))

    def self_pairs(self) -> list[tuple[int, int]]:
        out: set = set()
        if self.root is None:
            return []
        stack = [(self.root, self.root)]
        while stack:
            a, b = stack.pop()
            if a is not b and not _overlap(a, b):
                continue
            if a.items is not None and b.items is not None:
                self._leaf_pairs(a, b, out)
            elif a is b:
                stack += [(a.left, a.left), (a.right, a.right), (a.left, a.right)]
            elif a.items is None and (b.items is not None or _size(a) >= _size(b)):
                stack += [(a.left, b), (a.right, b)]
            else:
                stack += [(a, b.left), (a, b.right)]
        return sorted(out)

    def query(self, lo, hi) -> list[int]:
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        out = []
        if self.root is None:
            return out
        stack = [self.root]
        while stack:
            n = stack.pop()
            if not (np.all(n.lo <= hi) and np.all(lo <= n.hi)):
                continue
            if n.items is not None:
                out += [int(i) for i in n.items if np.all(self.lo[i] <= hi) and np.all(lo <= self.hi[i])]
            else:
                stack += [n.left, n.right]
        return sorted(out)


def _size(n: _Node) -> float:
    return float(np.sum(n.hi - n.lo))


def fattened_aabbs(boxes_lo, boxes_hi, margin_ratio: float):
    lo = np.asarray(boxes_lo, dtype=float).reshape(-1, 3)
    hi = np.asarray(boxes_hi, dtype=float).reshape(-1, 3)
    if len(lo) == 0:
        return lo, hi
    margin = margin_ratio * float(np.mean(np.max(hi - lo, axis=1)))
    return lo - margin, hi + margin


def broad_phase(bodies, margin_ratio: float = 0.04) -> list[tuple[int, int]]:
    """Candidate body pairs whose fattened AABBs overlap (margin relative to mean cell size)."""
    if len(bodies) < 2:
        return []
    boxes = [b.aabb() for b in bodies]
    lo, hi = fattened_aabbs([x[0] for x in boxes], [x[1] for x in boxes], margin_ratio)
    return AABBTree(lo, hi).self_pairs()


# ---------------------------------------------------------------------------
# GJK
# ---------------------------------------------------------------------------

def _posed_vertices(shape, pose: RigidTransform | None) -> np.ndarray:
    V = shape.vertices if isinstance(shape, ConvexPolyhedron) else np.asarray(shape, dtype=float)
    return V if pose is None else pose.apply(V)


def _support(V: np.ndarray, d: np.ndarray) -> int:
    return int(np.argmax(V @ d))


def _solve_small(G: list, r: list):
    """Solve a 1x1, 2x2 or 3x3 system by Cramer's rule; None if singular."""
    k = len(r)
    if k == 1:
        return [r[0] / G[0][0]] if G[0][0] > 1e-300 else None
    if k == 2:
        det = G[0][0] * G[1][1] - G[0][1] * G[1][0]
        if abs(det) <= 1e-14 * G[0][0] * G[1][1]:
            return None
        return [(r[0] * G[1][1] - G[0][1] * r[1]) / det, (G[0][0] * r[1] - r[0] * G[1][0]) / det]
    M = np.array(G)
    try:
        if abs(np.linalg.det(M)) <= 1e-14 * M[0, 0] * M[1, 1] * M[2, 2]:
            return None
        return np.linalg.solve(M, r).tolist()
    except np.linalg.LinAlgError:
        return None


def _subset_table(m: int, newest: bool) -> list[tuple]:
    out = [sub for size in range(1, m + 1) for sub in combinations(range(m), size)]
    return [sub for sub in out if sub[-1] == m - 1] if newest and m > 1 else out


_SUBSETS = {(m, k): _subset_table(m, k) for m in range(1, 5) for k in (True, False)}


def _nearest_over(P: list, subsets: list):
    best = None
    for sub in subsets:
        S = [P[i] for i in sub]
        if len(sub) == 1:
            lam = [1.0]
        else:
            s0 = S[0]
            E = [[x[0] - s0[0], x[1] - s0[1], x[2] - s0[2]] for x in S[1:]]
            G = [[e[0] * f[0] + e[1] * f[1] + e[2] * f[2] for f in E] for e in E]
            rhs = [-(e[0] * s0[0] + e[1] * s0[1] + e[2] * s0[2]) for e in E]
            mu = _solve_small(G, rhs)
            if mu is None:
                continue
            lam = [1.0 - sum(mu)] + mu
        if min(lam) < -1e-12:
            continue
        p = [sum(l * x[c] for l, x in zip(lam, S)) for c in range(3)]
        d = p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
        if best is None or d < best[0] - 1e-15:
            best = (d, p, lam, sub)
    return best


def _is_nearest(P: list, p: list, d: float) -> bool:
    """Optimality test: ``p . (w - p) >= 0`` for every vertex ``w``."""
    tol = 1e-12 * max(d, max(x[0] * x[0] + x[1] * x[1] + x[2] * x[2] for x in P))
    return all(p[0] * x[0] + p[1] * x[1] + p[2] * x[2] - d >= -tol for x in P)


def _closest_on_simplex(W: np.ndarray):
    """Point of the simplex ``conv(W)`` nearest the origin by subset enumeration.

    The nearest point of a freshly extended GJK simplex normally involves
    its newest vertex, so those subsets are tried first; the full
    enumeration runs only if the optimality test fails.  Returns
    ``(point, barycentric weights over W, used-indices)``.
    """
    m = len(W)
    P = W.tolist()
    best = _nearest_over(P, _SUBSETS[m, True])
    if best is None or not _is_nearest(P, best[1], best[0]):
        best = _nearest_over(P, _SUBSETS[m, False])
    _, p, lam, sub = best
    full = np.zeros(m)
    full[list(sub)] = lam
    return np.array(p), full, list(sub)


@dataclass(frozen=True)
class GJKResult:
    distance: float
    point_a: np.ndarray
    point_b: np.ndarray
    approximate: bool
    simplex: tuple


def gjk_distance(A, B, pose_a: RigidTransform | None = None, pose_b: RigidTransform | None = None,
                 tol: float = 1e-12, max_iter: int = GJK_MAX_ITER) -> GJKResult:
    """Euclidean distance between two convex vertex sets with witness points.

    Zero means the shapes intersect.  If the iteration budget runs out, the
    returned distance is a lower bound and ``approximate`` is set.
    """
    VA = _posed_vertices(A, pose_a)
    VB = _posed_vertices(B, pose_b)
    scale = max(float(np.ptp(np.vstack([VA, VB]), axis=0).max()), 1e-300)
    ia, ib = 0, 0
    d = VA.mean(0) - VB.mean(0)
    if d @ d < 1e-30 * scale * scale:
        d = np.array([1.0, 0.0, 0.0])
    ia, ib = _support(VA, -d), _support(VB, d)
    simplex = [(ia, ib)]
    W = np.array([VA[ia] - VB[ib]])
    lower = 0.0
    for _ in range(max_iter):
        v, lam, used = _closest_on_simplex(W)
        simplex = [simplex[i] for i in used]
        W = W[used]
        lam = lam[used]
        vv = float(v @ v)
        if len(simplex) == 4 or vv <= (tol * scale) ** 2:
            return GJKResult(0.0, _witness(VA, simplex, lam, 0), _witness(VB, simplex, lam, 1), False,
                             tuple(simplex))
        ia, ib = _support(VA, -v), _support(VB, v)
        w = VA[ia] - VB[ib]
        lower = max(lower, float(v @ w) / np.sqrt(vv))
        if vv - float(v @ w) <= tol * vv or (ia, ib) in simplex:
            return GJKResult(float(np.sqrt(vv)), _witness(VA, simplex, lam, 0), _witness(VB, simplex, lam, 1),
                             False, tuple(simplex))
        simplex.append((ia, ib))
        W = np.vstack([W, w])
    return GJKResult(max(lower, 0.0), _witness(VA, simplex[:len(lam)], lam, 0),
                     _witness(VB, simplex[:len(lam)], lam, 1), True, tuple(simplex))


def _witness(V: np.ndarray, simplex, lam: np.ndarray, side: int) -> np.ndarray:
    return np.sum([l * V[s[side]] for s, l in zip(simplex, lam)], axis=0)


# ---------------------------------------------------------------------------
# EPA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Penetration:
    depth: float
    normal: np.ndarray
    point: np.ndarray


def _face_planes(P: np.ndarray, F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit normals and offsets of triangles ``F``; degenerate faces get an infinite offset."""
    a, b, c = P[F[:, 0]], P[F[:, 1]], P[F[:, 2]]
    u, v = b - a, c - a
    n = np.stack([u[:, 1] * v[:, 2] - u[:, 2] * v[:, 1],
                  u[:, 2] * v[:, 0] - u[:, 0] * v[:, 2],
                  u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]], axis=1)
    ln = np.sqrt(np.einsum("ij,ij->i", n, n))
    ok = ln > 1e-300
    n[ok] /= ln[ok, None]
    n[~ok] = 0.0
    d = np.where(ok, np.einsum("ij,ij->i", n, a), np.inf)
    return n, d


def epa_penetration(A, B, pose_a: RigidTransform | None = None, pose_b: RigidTransform | None = None,
                    tol: float = 1e-10, max_iter: int = EPA_MAX_ITER) -> Penetration:
    """Minimal translation separating intersecting convex shapes.

    ``normal`` points from B to A: moving A by ``depth * normal`` makes the
    shapes touch.  ``B`` may be a GroundPlane, handled in closed form.
    """
    if isinstance(B, GroundPlane):
        VA = _posed_vertices(A, pose_a)
        i = int(np.argmin(VA[:, 1]))
        depth = max(B.height - float(VA[i, 1]), 0.0)
        return Penetration(depth, B.normal, VA[i].copy())
    VA = _posed_vertices(A, pose_a)
    VB = _posed_vertices(B, pose_b)
    scale = max(float(np.ptp(np.vstack([VA, VB]), axis=0).max()), 1e-300)
    from scipy.spatial import ConvexHull, QhullError

    dirs = np.vstack([np.eye(3), -np.eye(3),
                      np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)]) / np.sqrt(3.0)])
    pairs = sorted({(_support(VA, d), _support(VB, -d)) for d in dirs})
    res = gjk_distance(VA, VB)
    if res.distance > 0.0:
        return Penetration(0.0, _unit(res.point_a - res.point_b), 0.5 * (res.point_a + res.point_b))
    pairs = sorted(set(pairs) | set(res.simplex))
    P = np.array([VA[i] - VB[j] for i, j in pairs])
    try:
        hull = ConvexHull(P)
    except QhullError:
        return Penetration(0.0, _unit(VA.mean(0) - VB.mean(0)), 0.5 * (VA.mean(0) + VB.mean(0)))
    pts = list(P)
    wit = list(pairs)
    F = hull.simplices.copy()
    n0, _ = _face_planes(P, F)
    flip = np.einsum("ij,ij->i", n0, hull.equations[:, :3]) < 0
    F[flip] = F[flip][:, [0, 2, 1]]
    faces = [list(map(int, f)) for f in F]
    for _ in range(max_iter):
        Pa = np.array(pts)
        normals, dists = _face_planes(Pa, np.array(faces))
        k = int(np.argmin(dists))
        n, dist = normals[k], float(dists[k])
        ia, ib = _support(VA, n), _support(VB, -n)
        w = VA[ia] - VB[ib]
        if float(w @ n) - dist <= tol * scale or (ia, ib) in wit:
            return _epa_result(Pa, wit, faces[k], n, dist, VA, VB)
        pts.append(w)
        wit.append((ia, ib))
        wi = len(pts) - 1
        visible = np.flatnonzero(normals @ w - dists > tol * scale).tolist()
        edges: dict = {}
        for j in visible:
            f = faces[j]
            for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                if (e[1], e[0]) in edges:
                    del edges[(e[1], e[0])]
                else:
                    edges[e] = True
        vis = set(visible)
        faces = [f for j, f in enumerate(faces) if j not in vis] + [[a, b, wi] for a, b in edges]
    raise MaxIterations("EPA did not converge")


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([0.0, 1.0, 0.0])


def _epa_result(P, wit, f, n, dist, VA, VB) -> Penetration:
    S = P[f]
    E = S[1:] - S[0]
    target = dist * n
    try:
        mu = np.linalg.lstsq(E.T, target - S[0], rcond=None)[0]
    except np.linalg.LinAlgError:
        mu = np.array([1.0, 1.0]) / 3.0
    lam = np.r_[1.0 - mu.sum(), mu]
    pa = sum(l * VA[wit[i][0]] for l, i in zip(lam, f))
    pb = sum(l * VB[wit[i][1]] for l, i in zip(lam, f))
    return Penetration(max(dist, 0.0), -n, 0.5 * (pa + pb))


# ---------------------------------------------------------------------------
# manifolds
# ---------------------------------------------------------------------------

def reduce_manifold(points: np.ndarray, depths: np.ndarray, k: int = MANIFOLD_POINTS) -> np.ndarray:
    """Indices of at most ``k`` points: the deepest, then greedy farthest-point picks."""
    n = len(points)
    if n <= k:
        return np.arange(n)
    chosen = [int(np.argmax(depths))]
    d = np.linalg.norm(points - points[chosen[0]], axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d))
        if d[nxt] <= 0.0:
            break
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(points - points[nxt], axis=1))
    return np.sort(np.asarray(chosen))


def ground_contacts(body_index: int, V: np.ndarray, ground: GroundPlane) -> list[Contact]:
    below = np.nonzero(V[:, 1] <= ground.height)[0]
    depth = ground.height - V[below, 1]
    keep = below[reduce_manifold(V[below], depth)]
    return [Contact(body_index, -1, V[i].copy(), ground.normal, float(ground.height - V[i, 1]), ("g", int(i)))
            for i in keep]


def _inside(P: ConvexPolyhedron, points: np.ndarray, tol: float) -> np.ndarray:
    n, d = P.planes()
    return np.all(points @ n.T <= d + tol, axis=1)


def face_axes_separate(A: ConvexPolyhedron, B: ConvexPolyhedron, tol: float) -> bool:
    """True if some face normal of either shape separates them or makes them merely touch."""
    for P, Q in ((A, B), (B, A)):
        n, d = P.planes()
        if np.any((Q.vertices @ n.T).min(0) >= d - tol):
            return True
    return False


def body_contacts(ia: int, ib: int, A: ConvexPolyhedron, B: ConvexPolyhedron) -> list[Contact]:
    """Contact manifold of two world-space polyhedra (empty if separated).

    Points are the vertices of each shape lying inside the other, reduced
    to at most ``MANIFOLD_POINTS``; when there are none (edge-edge
    contact) the EPA point is used.  Pairs separated or touching along a
    face normal are rejected before GJK.
    """
    if face_axes_separate(A, B, 1e-9 * max(A.diameter, B.diameter)):
        return []
    pen = epa_penetration(A, B)
    if pen.depth <= 0.0:
        return []
    tol = 1e-9 * max(A.diameter, B.diameter)
    ia_in = np.nonzero(_inside(B, A.vertices, tol))[0]
    ib_in = np.nonzero(_inside(A, B.vertices, tol))[0]
    pts = np.concatenate([A.vertices[ia_in], B.vertices[ib_in]])
    if len(pts) == 0:
        return [Contact(ia, ib, pen.point, pen.normal, pen.depth, ("e", 0))]
    feats = [("a", int(i)) for i in ia_in] + [("b", int(j)) for j in ib_in]
    # deeper along the normal means farther into the other body
    side = np.r_[-(A.vertices[ia_in] @ pen.normal), B.vertices[ib_in] @ pen.normal]
    keep = reduce_manifold(pts, side)
    return [Contact(ia, ib, pts[k].copy(), pen.normal, pen.depth, feats[k]) for k in keep]
