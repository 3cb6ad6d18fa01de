"""Inside/outside oracles bounding a shape.

Every volume exposes ``inside(points)`` (vectorised, boundary counts as
inside), a bounding sphere (``center``, ``radius``) and, when cheap, a
``signed_distance`` that is negative inside.  Polytope volumes also expose
``halfspaces`` so that clipping against them can be exact.
"""
from __future__ import annotations

import numpy as np

from .geometry import (
    RigidTransform,
    TriangleMesh,
    TriangleSet,
    as_points,
    mesh_inside,
)


class ImplicitVolume:
    center: np.ndarray
    radius: float
    halfspaces: tuple[np.ndarray, np.ndarray] | None = None

    def inside(self, points) -> np.ndarray:
        return self.signed_distance(points) <= 0.0

    def signed_distance(self, points) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no signed distance")

    @property
    def has_signed_distance(self) -> bool:
        try:
            self.signed_distance(self.center.reshape(1, 3))
        except NotImplementedError:
            return False
        return True

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.center - self.radius, self.center + self.radius

    def contains(self, p) -> bool:
        return bool(self.inside(np.asarray(p, dtype=float).reshape(1, 3))[0])

    def to_dict(self) -> dict:
        raise NotImplementedError(f"{type(self).__name__} is not serialisable")


class SphereVolume(ImplicitVolume):
    def __init__(self, center=(0.0, 0.0, 0.0), radius: float = 1.0):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.sphere_radius = float(radius)

    def signed_distance(self, points):
        return np.linalg.norm(as_points(points) - self.center, axis=1) - self.sphere_radius

    def to_dict(self):
        return {"kind": "sphere", "center": self.center.tolist(), "radius": self.sphere_radius}


class BoxVolume(ImplicitVolume):
    def __init__(self, lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)):
        self.lo = np.asarray(lo, dtype=float)
        self.hi = np.asarray(hi, dtype=float)
        self.center = 0.5 * (self.lo + self.hi)
        self.radius = 0.5 * float(np.linalg.norm(self.hi - self.lo))
        eye = np.eye(3)
        self.halfspaces = (np.vstack([eye, -eye]), np.concatenate([self.hi, -self.lo]))

    def inside(self, points):
        p = as_points(points)
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def signed_distance(self, points):
        p = as_points(points) - self.center
        q = np.abs(p) - 0.5 * (self.hi - self.lo)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        return outside + np.minimum(q.max(axis=1), 0.0)

    def bounds(self):
        return self.lo.copy(), self.hi.copy()

    def to_dict(self):
        return {"kind": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


class ConvexPolytopeVolume(ImplicitVolume):
    """Intersection of half-spaces ``n_k · x <= d_k`` (must be bounded)."""

    def __init__(self, normals, offsets, center=None, radius=None):
        n = np.asarray(normals, dtype=float).reshape(-1, 3)
        norm = np.linalg.norm(n, axis=1)
        self.normals = n / norm[:, None]
        self.offsets = np.asarray(offsets, dtype=float) / norm
        self.halfspaces = (self.normals, self.offsets)
        if center is None or radius is None:
            from .geometry import halfspace_polyhedron

            P = halfspace_polyhedron(self.normals, self.offsets)
            lo, hi = P.vertices.min(0), P.vertices.max(0)
            center = 0.5 * (lo + hi)
            radius = float(np.max(np.linalg.norm(P.vertices - center, axis=1)))
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh) -> ConvexPolytopeVolume:
        """Polytope whose faces are the (convex) mesh triangles."""
        n = mesh.normals()
        a, _, _ = mesh.corners
        return cls(n, np.einsum("ij,ij->i", n, a))

    def signed_distance(self, points):
        p = as_points(points)
        return np.max(p @ self.normals.T - self.offsets, axis=1)

    def to_dict(self):
        return {"kind": "polytope", "normals": self.normals.tolist(), "offsets": self.offsets.tolist()}


class HalfSpaceVolume(ImplicitVolume):
    """``n · x <= d``; the bounding sphere is a user-provided region of interest."""

    def __init__(self, normal, offset: float, center=(0.0, 0.0, 0.0), radius: float = 10.0):
        n = np.asarray(normal, dtype=float)
        s = np.linalg.norm(n)
        self.normal = n / s
        self.offset = float(offset) / s
        self.halfspaces = (self.normal.reshape(1, 3), np.array([self.offset]))
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)

    def signed_distance(self, points):
        return as_points(points) @ self.normal - self.offset

    def to_dict(self):
        return {"kind": "halfspace", "normal": self.normal.tolist(), "offset": self.offset,
                "center": self.center.tolist(), "radius": self.radius}


class CapsuleVolume(ImplicitVolume):
    def __init__(self, a, b, radius: float):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.capsule_radius = float(radius)
        self.center = 0.5 * (self.a + self.b)
        self.radius = 0.5 * float(np.linalg.norm(self.b - self.a)) + self.capsule_radius

    def signed_distance(self, points):
        p = as_points(points)
        ab = self.b - self.a
        t = np.clip((p - self.a) @ ab / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(p - (self.a + t[:, None] * ab), axis=1) - self.capsule_radius

    def to_dict(self):
        return {"kind": "capsule", "a": self.a.tolist(), "b": self.b.tolist(), "radius": self.capsule_radius}


class CylinderVolume(ImplicitVolume):
    """Capped cylinder around ``axis`` through ``center``."""

    def __init__(self, center=(0.0, 0.0, 0.0), axis=(0.0, 1.0, 0.0), half_length: float = 1.0,
                 radius: float = 0.3):
        self.center = np.asarray(center, dtype=float)
        ax = np.asarray(axis, dtype=float)
        self.axis = ax / np.linalg.norm(ax)
        self.half_length = float(half_length)
        self.cyl_radius = float(radius)
        self.radius = float(np.hypot(self.half_length, self.cyl_radius))

    def signed_distance(self, points):
        p = as_points(points) - self.center
        h = p @ self.axis
        r = np.linalg.norm(p - h[:, None] * self.axis, axis=1)
        dx = r - self.cyl_radius
        dy = np.abs(h) - self.half_length
        outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
        return outside + np.minimum(np.maximum(dx, dy), 0.0)

    def to_dict(self):
        return {"kind": "cylinder", "center": self.center.tolist(), "axis": self.axis.tolist(),
                "half_length": self.half_length, "radius": self.cyl_radius}


class UnionVolume(ImplicitVolume):
    def __init__(self, parts):
        self.parts = list(parts)
        lo = np.min([p.bounds()[0] for p in self.parts], axis=0)
        hi = np.max([p.bounds()[1] for p in self.parts], axis=0)
        self.center = 0.5 * (lo + hi)
        self.radius = max(
            float(np.linalg.norm(p.center - self.center)) + p.radius for p in self.parts
        )

    def inside(self, points):
        p = as_points(points)
        out = np.zeros(len(p), dtype=bool)
        for part in self.parts:
            out |= part.inside(p)
        return out

    def signed_distance(self, points):
        p = as_points(points)
        return np.min([part.signed_distance(p) for part in self.parts], axis=0)

    def to_dict(self):
        return {"kind": "union", "parts": [p.to_dict() for p in self.parts]}


class TransformedVolume(ImplicitVolume):
    """``base`` moved by the rigid transform ``T``."""

    def __init__(self, base: ImplicitVolume, T: RigidTransform):
        self.base = base
        self.T = T
        self._inv = T.inverse()
        self.center = T.apply(base.center)
        self.radius = base.radius
        if base.halfspaces is not None:
            n, d = base.halfspaces
            n2 = T.apply_vector(n)
            self.halfspaces = (n2, d + n2 @ T.translation)

    def inside(self, points):
        return self.base.inside(self._inv.apply(as_points(points)))

    def signed_distance(self, points):
        return self.base.signed_distance(self._inv.apply(as_points(points)))

    def to_dict(self):
        return {"kind": "transformed", "base": self.base.to_dict(), "transform": self.T.to_list()}


class ScaledVolume(ImplicitVolume):
    """Anisotropic scaling of ``base`` about ``origin`` (signed distance is approximate)."""

    def __init__(self, base: ImplicitVolume, scale, origin=(0.0, 0.0, 0.0)):
        self.base = base
        self.scale = np.asarray(scale, dtype=float)
        self.origin = np.asarray(origin, dtype=float)
        self.center = self.origin + self.scale * (base.center - self.origin)
        self.radius = base.radius * float(self.scale.max())

    def _pull(self, points):
        return self.origin + (as_points(points) - self.origin) / self.scale

    def inside(self, points):
        return self.base.inside(self._pull(points))

    def signed_distance(self, points):
        return self.base.signed_distance(self._pull(points)) * float(self.scale.min())

    def to_dict(self):
        return {"kind": "scaled", "base": self.base.to_dict(), "scale": self.scale.tolist(),
                "origin": self.origin.tolist()}


class MeshVolume(ImplicitVolume):
    """Watertight triangle mesh; inside by ray parity."""

    def __init__(self, mesh: TriangleMesh):
        self.mesh = mesh
        lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
        self.center = 0.5 * (lo + hi)
        self.radius = float(np.max(np.linalg.norm(mesh.vertices - self.center, axis=1)))
        self._tris = None

    def inside(self, points):
        p = as_points(points)
        out = np.zeros(len(p), dtype=bool)
        lo, hi = self.bounds()
        cand = np.all((p >= lo) & (p <= hi), axis=1)
        if np.any(cand):
            out[cand] = mesh_inside(self.mesh, p[cand])
        return out

    def bounds(self):
        return self.mesh.vertices.min(0), self.mesh.vertices.max(0)

    def signed_distance(self, points):
        if self._tris is None:
            self._tris = TriangleSet(*self.mesh.corners)
        p = as_points(points)
        d = self._tris.distance(p)
        return np.where(self.inside(p), -d, d)

    def to_dict(self):
        return {"kind": "mesh", "vertices": self.mesh.vertices.tolist(),
                "triangles": self.mesh.triangles.tolist()}


def volume_from_dict(d: dict) -> ImplicitVolume:
    kind = d["kind"]
    if kind == "sphere":
        return SphereVolume(d["center"], d["radius"])
    if kind == "box":
        return BoxVolume(d["lo"], d["hi"])
    if kind == "polytope":
        return ConvexPolytopeVolume(d["normals"], d["offsets"])
    if kind == "halfspace":
        return HalfSpaceVolume(d["normal"], d["offset"], d["center"], d["radius"])
    if kind == "capsule":
        return CapsuleVolume(d["a"], d["b"], d["radius"])
    if kind == "cylinder":
        return CylinderVolume(d["center"], d["axis"], d["half_length"], d["radius"])
    if kind == "union":
        return UnionVolume([volume_from_dict(p) for p in d["parts"]])
    if kind == "transformed":
        return TransformedVolume(volume_from_dict(d["base"]), RigidTransform.from_list(d["transform"]))
    if kind == "scaled":
        return ScaledVolume(volume_from_dict(d["base"]), d["scale"], d["origin"])
    if kind == "mesh":
        return MeshVolume(TriangleMesh(d["vertices"], d["triangles"]))
    raise ValueError(f"unknown volume kind {kind!r}")
