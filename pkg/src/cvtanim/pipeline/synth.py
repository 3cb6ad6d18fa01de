"""Synthetic ground-truth sequences: analytic shapes, exact surface samples, known motion."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..geometry import OrientedPointCloud, RigidTransform
from ..volumes import (
    CapsuleVolume,
    CylinderVolume,
    ImplicitVolume,
    ScaledVolume,
    SphereVolume,
    TransformedVolume,
    UnionVolume,
)

SHAPES = ("sphere", "capsule", "two-lobe", "cylinder")
MOTIONS = ("rigid", "bend", "stretch", "static")
ON_SURFACE_TOL = 1e-9


@dataclass(frozen=True)
class SyntheticSceneSpec:
    """Base shape, motion program and sampling of a synthetic capture.

    ``rigid`` moves by ``velocity`` (m per frame) and ``angular_velocity``
    (rad per frame about the shape centre).  ``bend`` rotates the upper half
    of the cylinder about the z axis through the origin, ramping linearly
    to ``bend_angle`` degrees at the last frame.  ``stretch`` scales along y
    up to ``1 + stretch`` at the last frame.
    """

    shape: str = "cylinder"
    motion: str = "rigid"
    frames: int = 20
    samples: int = 4000
    noise: float = 0.0
    velocity: tuple = (0.0, 0.0, 0.0)
    angular_velocity: tuple = (0.0, 0.0, 0.0)
    bend_angle: float = 30.0
    stretch: float = 0.2
    scale: float = 0.5

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ConfigError(f"unknown shape {self.shape!r}")
        if self.motion not in MOTIONS:
            raise ConfigError(f"unknown motion {self.motion!r}")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if self.samples < 1:
            raise ConfigError("samples must be >= 1")
        if self.noise < 0.0:
            raise ConfigError("noise must be >= 0")
        if self.motion == "bend" and self.shape != "cylinder":
            raise ConfigError("bend is defined for the cylinder only")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticSceneSpec:
        d = dict(d)
        for k in ("velocity", "angular_velocity"):
            if k in d:
                d[k] = tuple(float(x) for x in d[k])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass(eq=False)
class FrameSequence:
    clouds: list
    volumes: list
    transforms: list | None = None
    spec: SyntheticSceneSpec | None = None

    def __post_init__(self):
        if len(self.clouds) != len(self.volumes):
            raise ValueError("one volume per frame required")
        if self.transforms is not None and len(self.transforms) != len(self.clouds):
            raise ValueError("one transform set per frame required")

    def __len__(self) -> int:
        return len(self.clouds)


# ---------------------------------------------------------------------------
# surface primitives: (area, sampler(n, rng) -> points, normals)
# ---------------------------------------------------------------------------

def _unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _frame(axis):
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    h = np.array([1.0, 0.0, 0.0]) if abs(a[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(a, h)
    u /= np.linalg.norm(u)
    return a, u, np.cross(a, u)


def _sphere(center, r):
    c = np.asarray(center, dtype=float)

    def sample(n, rng):
        d = _unit(rng, n)
        return c + r * d, d
    return 4.0 * math.pi * r * r, sample


def _cyl_side(center, axis, half, r):
    c = np.asarray(center, dtype=float)
    a, u, w = _frame(axis)

    def sample(n, rng):
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        h = rng.uniform(-half, half, n)
        d = np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w
        return c + h[:, None] * a + r * d, d
    return 2.0 * math.pi * r * 2.0 * half, sample


def _disk(center, normal, r):
    c = np.asarray(center, dtype=float)
    a, u, w = _frame(normal)

    def sample(n, rng):
        rho = r * np.sqrt(rng.uniform(0.0, 1.0, n))
        phi = rng.uniform(0.0, 2.0 * math.pi, n)
        p = c + rho[:, None] * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * w)
        return p, np.broadcast_to(a, p.shape).copy()
    return math.pi * r * r, sample


def _cylinder_parts(center, half, r):
    c = np.asarray(center, dtype=float)
    y = np.array([0.0, 1.0, 0.0])
    return [_cyl_side(c, y, half, r), _disk(c + half * y, y, r), _disk(c - half * y, -y, r)]


def base_shape(spec: SyntheticSceneSpec, bend: float = 0.0):
    """Volume and surface primitives of the base shape; ``bend`` in radians."""
    s = spec.scale
    if spec.shape == "sphere":
        return SphereVolume((0, 0, 0), s), [_sphere((0, 0, 0), s)]
    if spec.shape == "capsule":
        a, b, r = (0.0, -0.8 * s, 0.0), (0.0, 0.8 * s, 0.0), 0.6 * s
        return CapsuleVolume(a, b, r), [_sphere(a, r), _sphere(b, r),
                                        _cyl_side((0, 0, 0), (0, 1, 0), 0.8 * s, r)]
    if spec.shape == "two-lobe":
        r = 0.7 * s
        c1, c2 = (-0.6 * s, 0.0, 0.0), (0.6 * s, 0.0, 0.0)
        return UnionVolume([SphereVolume(c1, r), SphereVolume(c2, r)]), [_sphere(c1, r), _sphere(c2, r)]
    # cylinder along y, radius 0.5 s, half length 1.0 s, split at y = 0 for bending
    r, L = 0.5 * s, 1.0 * s
    if bend == 0.0 and spec.motion != "bend":
        return CylinderVolume((0, 0, 0), (0, 1, 0), L, r), _cylinder_parts((0, 0, 0), L, r)
    lower = CylinderVolume((0, -L / 2, 0), (0, 1, 0), L / 2, r)
    upper = CylinderVolume((0, L / 2, 0), (0, 1, 0), L / 2, r)
    R = RigidTransform.from_rotvec((0.0, 0.0, bend))
    vol = UnionVolume([lower, TransformedVolume(upper, R), SphereVolume((0, 0, 0), r)])
    y = np.array([0.0, 1.0, 0.0])
    prims = [_cyl_side((0, -L / 2, 0), y, L / 2, r), _disk((0, -L, 0), -y, r), _sphere((0, 0, 0), r)]
    for area, f in [_cyl_side((0, L / 2, 0), y, L / 2, r), _disk((0, L, 0), y, r)]:
        prims.append((area, _transformed_sampler(f, R)))
    return vol, prims


def _transformed_sampler(f, T: RigidTransform):
    def sample(n, rng):
        p, d = f(n, rng)
        return T.apply(p), T.apply_vector(d)
    return sample


def sample_surface(volume: ImplicitVolume, prims, n: int, rng: np.random.Generator) -> OrientedPointCloud:
    """``n`` area-uniform samples of the union boundary with exact normals."""
    areas = np.array([a for a, _ in prims])
    tol = ON_SURFACE_TOL * max(volume.radius, 1.0)
    pts, nrm = [], []
    total = 0
    draw = n
    while total < n:
        counts = rng.multinomial(draw, areas / areas.sum())
        for (_, f), k in zip(prims, counts):
            if k == 0:
                continue
            p, d = f(int(k), rng)
            keep = volume.signed_distance(p) >= -tol
            pts.append(p[keep])
            nrm.append(d[keep])
            total += int(keep.sum())
        draw = max(n - total, 16) * 2
    P = np.concatenate(pts)
    N = np.concatenate(nrm)
    idx = np.sort(rng.permutation(len(P))[:n])
    return OrientedPointCloud(P[idx], N[idx])


def _frame_param(spec: SyntheticSceneSpec, f: int) -> float:
    return f / (spec.frames - 1) if spec.frames > 1 else 0.0


def rigid_motion(spec: SyntheticSceneSpec, f: int, center=(0.0, 0.0, 0.0)) -> RigidTransform:
    rot = RigidTransform.about_point(np.asarray(spec.angular_velocity, dtype=float) * f, center)
    return RigidTransform.from_translation(np.asarray(spec.velocity, dtype=float) * f) @ rot


def synth_sequence(spec: SyntheticSceneSpec, seed: int = 0) -> FrameSequence:
    """Per-frame volumes and noisy oriented clouds; ground truth for rigid and bend motions.

    Noise displaces each point along its exact normal by a centred normal
    deviate of standard deviation ``spec.noise``.
    """
    clouds, volumes, transforms = [], [], []
    base_vol, base_prims = base_shape(spec)
    base_cloud = None
    for f in range(spec.frames):
        rng = np.random.default_rng([seed, f])
        if spec.motion in ("rigid", "static"):
            if base_cloud is None:
                base_cloud = sample_surface(base_vol, base_prims, spec.samples, np.random.default_rng([seed, 0]))
            T = rigid_motion(spec, f) if spec.motion == "rigid" else RigidTransform.identity()
            vol = base_vol if spec.motion == "static" else TransformedVolume(base_vol, T)
            P, N = T.apply(base_cloud.points), T.apply_vector(base_cloud.normals)
            transforms.append({"body": T})
        elif spec.motion == "bend":
            angle = math.radians(spec.bend_angle) * _frame_param(spec, f)
            vol, prims = base_shape(spec, angle)
            cloud = sample_surface(vol, prims, spec.samples, rng)
            P, N = cloud.points, cloud.normals
            transforms.append({"lower": RigidTransform.identity(),
                               "upper": RigidTransform.from_rotvec((0.0, 0.0, angle))})
        else:
            k = 1.0 + spec.stretch * _frame_param(spec, f)
            scale = np.array([1.0, k, 1.0])
            cloud = sample_surface(base_vol, base_prims, spec.samples, rng)
            vol = ScaledVolume(base_vol, scale)
            P = cloud.points * scale
            N = cloud.normals / scale
            N /= np.linalg.norm(N, axis=1, keepdims=True)
            transforms = None
        if spec.noise > 0.0:
            P = P + rng.normal(0.0, spec.noise, size=(len(P), 1)) * N
        clouds.append(OrientedPointCloud(P, N))
        volumes.append(vol)
    return FrameSequence(clouds, volumes, transforms, spec)


def segment_of(spec: SyntheticSceneSpec, points) -> np.ndarray:
    """Ground-truth segment name of template points (frame 0 coordinates)."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    if spec.motion == "bend":
        return np.where(p[:, 1] > 0.0, "upper", "lower")
    return np.full(len(p), "body")


__all__ = ["FrameSequence", "MOTIONS", "SHAPES", "SyntheticSceneSpec", "base_shape", "rigid_motion",
           "sample_surface", "segment_of", "synth_sequence"]
