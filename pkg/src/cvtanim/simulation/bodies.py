"""Rigid bodies built from cells, acquired trajectories and recall springs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateCell, DegenerateInput
from ..geometry import (
    ConvexPolyhedron,
    RigidTransform,
    convex_hull,
    polyhedron_moments,
    quat_mul,
    quat_conj,
    quat_to_matrix,
    quat_to_rotvec,
    quat_normalize,
    quat_slerp,
)


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1.0 / 300.0
    restitution: float = 0.3
    friction: float = 0.5
    iterations: int = 10
    baumgarte: float = 0.2
    slop: float = 1e-3
    restitution_threshold: float = 0.1
    gravity: tuple = (0.0, -9.8, 0.0)
    aabb_margin: float = 0.04
    max_hull_vertices: int | None = None
    collide_active_pairs: bool = False
    warm_start: bool = True

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 <= self.restitution <= 1.0:
            raise ValueError("restitution must lie in [0, 1]")
        if self.friction < 0.0:
            raise ValueError("friction must be >= 0")


@dataclass(eq=False)
class RigidBody:
    """Homogeneous rigid body; the body frame origin is the centre of mass.

    State is position, unit quaternion (w, x, y, z), linear and angular
    momentum.  Kinematic bodies follow a prescribed trajectory and have
    infinite effective mass in the contact solver.  Bodies collide with
    each other only within the same ``group``.
    """

    shape: ConvexPolyhedron
    mass: float
    inertia: np.ndarray
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    momentum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    angular_momentum: np.ndarray = field(default_factory=lambda: np.zeros(3))
    cell: int = -1
    kinematic: bool = False
    trajectory: object = None
    group: int = 0

    def __post_init__(self):
        if not self.mass > 0.0:
            raise DegenerateCell("mass must be positive")
        self.inertia = np.asarray(self.inertia, dtype=float).reshape(3, 3)
        if not np.allclose(self.inertia, self.inertia.T, atol=1e-12 * max(1.0, np.abs(self.inertia).max())):
            raise DegenerateCell("inertia must be symmetric")
        if np.linalg.eigvalsh(self.inertia).min() <= 0.0:
            raise DegenerateCell("inertia must be positive definite")
        self.inertia_inv = np.linalg.inv(self.inertia)
        self.position = np.array(self.position, dtype=float).reshape(3)
        self.rotation = quat_normalize(np.array(self.rotation, dtype=float).reshape(4))
        self.momentum = np.array(self.momentum, dtype=float).reshape(3)
        self.angular_momentum = np.array(self.angular_momentum, dtype=float).reshape(3)
        self.radius = float(np.max(np.linalg.norm(self.shape.vertices, axis=1)))
        self.mean_radius = float(np.mean(np.linalg.norm(self.shape.vertices, axis=1)))

    @property
    def inv_mass(self) -> float:
        return 0.0 if self.kinematic else 1.0 / self.mass

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def world_inertia_inv(self) -> np.ndarray:
        if self.kinematic:
            return np.zeros((3, 3))
        R = self.R
        return R @ self.inertia_inv @ R.T

    @property
    def velocity(self) -> np.ndarray:
        return self.momentum / self.mass

    @velocity.setter
    def velocity(self, v) -> None:
        self.momentum = self.mass * np.asarray(v, dtype=float)

    @property
    def angular_velocity(self) -> np.ndarray:
        R = self.R
        return R @ (self.inertia_inv @ (R.T @ self.angular_momentum))

    @angular_velocity.setter
    def angular_velocity(self, w) -> None:
        R = self.R
        self.angular_momentum = R @ (self.inertia @ (R.T @ np.asarray(w, dtype=float)))

    def transform(self) -> RigidTransform:
        return RigidTransform(self.rotation, self.position)

    def world_vertices(self) -> np.ndarray:
        return self.shape.vertices @ self.R.T + self.position

    def world_shape(self) -> ConvexPolyhedron:
        return self.shape.transformed(self.transform())

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.world_vertices()
        return v.min(0), v.max(0)

    def kinetic_energy(self) -> float:
        v = self.velocity
        w = self.angular_velocity
        return 0.5 * self.mass * float(v @ v) + 0.5 * float(w @ self.angular_momentum)

    def copy(self) -> RigidBody:
        b = RigidBody(self.shape, self.mass, self.inertia.copy(), self.position.copy(), self.rotation.copy(),
                      self.momentum.copy(), self.angular_momentum.copy(), self.cell, self.kinematic,
                      self.trajectory, self.group)
        return b


def _simplify(P: ConvexPolyhedron, max_vertices: int) -> ConvexPolyhedron:
    V = P.vertices
    if len(V) <= max_vertices:
        return P
    c = V.mean(0)
    chosen = [int(np.argmax(np.linalg.norm(V - c, axis=1)))]
    d = np.linalg.norm(V - V[chosen[0]], axis=1)
    while len(chosen) < max_vertices:
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(V - V[nxt], axis=1))
    return convex_hull(V[np.sort(chosen)])


def body_from_polyhedron(P: ConvexPolyhedron, density: float = 1000.0, cell: int = -1,
                         max_vertices: int | None = None) -> RigidBody:
    """Mass properties of a homogeneous convex polyhedron, body frame at its centroid."""
    if not density > 0.0:
        raise DegenerateCell("density must be positive")
    try:
        V, c, C = polyhedron_moments(P)
    except DegenerateInput as exc:
        raise DegenerateCell(str(exc)) from None
    if max_vertices is not None:
        P = _simplify(P, max_vertices)
    shape = P.translated(-c)
    # inertia = rho (tr(C) I - C) with C the second moment about the centroid
    inertia = density * (np.trace(C) * np.eye(3) - C)
    return RigidBody(shape, density * V, inertia, position=c, cell=cell)


def body_from_cell(cell, density: float = 1000.0, max_vertices: int | None = None) -> RigidBody:
    P = cell.cell if hasattr(cell, "cell") else cell
    return body_from_polyhedron(P, density, max_vertices=max_vertices)


# ---------------------------------------------------------------------------
# acquired trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class StaticTarget:
    position: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def state(self, t: float):
        return (np.asarray(self.position, dtype=float), quat_normalize(np.asarray(self.rotation, dtype=float)),
                np.zeros(3), np.zeros(3))


@dataclass(frozen=True, eq=False)
class SampledTrajectory:
    """Piecewise interpolation of sampled poses: linear positions, slerped rotations.

    Velocities are the exact derivatives of the interpolant on each interval
    (right-continuous at samples); outside the sampled range the pose is held.
    """

    times: np.ndarray
    positions: np.ndarray
    rotations: np.ndarray

    def _bracket(self, t: float):
        T = self.times
        if t <= T[0]:
            return 0, 0.0, False
        if t >= T[-1]:
            return len(T) - 2 if len(T) > 1 else 0, 1.0, False
        i = int(np.searchsorted(T, t, side="right")) - 1
        i = min(max(i, 0), len(T) - 2)
        return i, (t - T[i]) / (T[i + 1] - T[i]), True

    def state(self, t: float):
        if len(self.times) == 1:
            return self.positions[0].copy(), self.rotations[0].copy(), np.zeros(3), np.zeros(3)
        i, s, moving = self._bracket(t)
        h = self.times[i + 1] - self.times[i]
        x0, x1 = self.positions[i], self.positions[i + 1]
        q0, q1 = self.rotations[i], self.rotations[i + 1]
        x = (1.0 - s) * x0 + s * x1
        q = quat_slerp(q0, q1, s)
        if not moving:
            return x, q, np.zeros(3), np.zeros(3)
        v = (x1 - x0) / h
        dq = quat_mul(q1, quat_conj(q0))
        w = quat_to_rotvec(quat_normalize(dq)) / h
        return x, q, v, w


@dataclass(eq=False)
class RecallSpring:
    """Damped spring pulling a body toward its acquired pose."""

    trajectory: object
    k: float
    damping: float
    k_rot: float = 0.0
    damping_rot: float = 0.0
    active: bool = True

    def __post_init__(self):
        if self.k < 0.0 or self.damping < 0.0 or self.k_rot < 0.0 or self.damping_rot < 0.0:
            raise ValueError("spring coefficients must be >= 0")


def default_spring(body: RigidBody, trajectory, period: float = 0.2) -> RecallSpring:
    """Critically damped spring with natural period ``period`` and matching angular terms."""
    k = body.mass * (2.0 * math.pi / period) ** 2
    lam = 2.0 * math.sqrt(k * body.mass)
    r2 = body.mean_radius ** 2
    return RecallSpring(trajectory, k, lam, k * r2, lam * r2)


def recall_force(spring: RecallSpring, body: RigidBody, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Force ``k (xa - x) + lambda (va - v)`` and the analogous torque.

    The torque is ``k_rot theta axis(Ra R^-1) + lambda_rot (wa - w)``.  An
    inactive spring yields zeros.
    """
    if not spring.active:
        return np.zeros(3), np.zeros(3)
    xa, qa, va, wa = spring.trajectory.state(t)
    F = spring.k * (xa - body.position) + spring.damping * (va - body.velocity)
    dq = quat_normalize(quat_mul(qa, quat_conj(body.rotation)))
    tau = spring.k_rot * quat_to_rotvec(dq) + spring.damping_rot * (wa - body.angular_velocity)
    return F, tau


@dataclass(frozen=True, eq=False)
class PendulumTrajectory:
    """Scripted pendulum: bob swinging in the plane spanned by ``swing`` and gravity."""

    pivot: np.ndarray
    length: float
    amplitude: float
    period: float
    swing: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    phase: float = 0.0

    def angle(self, t: float) -> tuple[float, float]:
        w = 2.0 * math.pi / self.period
        th = self.amplitude * math.cos(w * t + self.phase)
        dth = -self.amplitude * w * math.sin(w * t + self.phase)
        return th, dth

    def state(self, t: float):
        th, dth = self.angle(t)
        e = np.asarray(self.swing, dtype=float)
        e = e / np.linalg.norm(e)
        down = np.array([0.0, -1.0, 0.0])
        axis = np.cross(down, e)
        pivot = np.asarray(self.pivot, dtype=float)
        x = pivot + self.length * (math.sin(th) * e + math.cos(th) * down)
        v = self.length * dth * (math.cos(th) * e - math.sin(th) * down)
        q = RigidTransform.from_rotvec(axis * th).rotation
        return x, q, v, axis * dth


__all__ = [
    "PendulumTrajectory", "RecallSpring", "RigidBody", "SampledTrajectory", "SimConfig", "StaticTarget",
    "body_from_cell", "body_from_polyhedron", "default_spring", "recall_force",
]
