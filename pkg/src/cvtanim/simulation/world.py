"""Scene container, sequential-impulse contact solver and the time step."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericalBlowup
from ..geometry import quat_from_rotvec, quat_mul, quat_normalize
from .bodies import RecallSpring, SimConfig, recall_force
from .collision import Contact, GroundPlane, broad_phase, body_contacts, ground_contacts

BLOWUP_LIMIT = 1e9


@dataclass(eq=False)
class Scene:
    bodies: list
    springs: list = field(default_factory=list)
    ground: GroundPlane | None = None
    config: SimConfig = field(default_factory=SimConfig)
    time: float = 0.0
    step_index: int = 0
    effects: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.springs) < len(self.bodies):
            self.springs = list(self.springs) + [None] * (len(self.bodies) - len(self.springs))
        self.gravity = np.asarray(self.config.gravity, dtype=float)
        self.warm: dict = {}
        self.last_recall_force = np.zeros((len(self.bodies), 3))
        self.last_contacts: list[Contact] = []
        self.last_normal_impulses: np.ndarray = np.zeros(0)
        # position-only correction velocities from the last contact solve
        self.pseudo_velocity = np.zeros((len(self.bodies), 6))
        # (step, time, body, kind) per spring deactivation
        self.events: list[tuple[int, float, int, str]] = []

    def spring_active(self, i: int) -> bool:
        s = self.springs[i]
        return s is not None and s.active

    def deactivate(self, i: int, kind: str) -> bool:
        """Switch off the spring of body ``i`` for good; False if it was already off."""
        s = self.springs[i]
        if s is None or not s.active:
            return False
        s.active = False
        self.events.append((self.step_index, self.time, i, kind))
        return True

    def add_body(self, body, spring: RecallSpring | None = None) -> int:
        self.bodies.append(body)
        self.springs.append(spring)
        return len(self.bodies) - 1

    def total_momentum(self) -> np.ndarray:
        return np.sum([b.momentum for b in self.bodies if not b.kinematic], axis=0)

    def mechanical_energy(self) -> float:
        e = 0.0
        for b in self.bodies:
            if not b.kinematic:
                e += b.kinetic_energy() - b.mass * float(self.gravity @ b.position)
        return e


def _contact_pairs(scene: Scene) -> list[tuple[int, int]]:
    pairs = broad_phase(scene.bodies, scene.config.aabb_margin)
    out = []
    for i, j in pairs:
        bi, bj = scene.bodies[i], scene.bodies[j]
        if bi.kinematic and bj.kinematic or bi.group != bj.group:
            continue
        if not scene.config.collide_active_pairs and scene.spring_active(i) and scene.spring_active(j):
            continue
        out.append((i, j))
    return out


def detect_contacts(scene: Scene) -> list[Contact]:
    contacts: list[Contact] = []
    world = [b.world_shape() for b in scene.bodies]
    if scene.ground is not None:
        for i, b in enumerate(scene.bodies):
            if not b.kinematic:
                contacts += ground_contacts(i, world[i].vertices, scene.ground)
    for i, j in _contact_pairs(scene):
        contacts += body_contacts(i, j, world[i], world[j])
    return contacts


def _tangents(N: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal tangent pairs for unit normals ``N`` of shape (m, 3)."""
    a = np.where((np.abs(N[:, 0]) < 0.9)[:, None], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    t1 = np.cross(N, a)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    return t1, np.cross(N, t1)


def solve_contacts(scene: Scene, contacts: list[Contact], kin_vel: dict | None = None) -> np.ndarray:
    """Sequential impulses on the current momenta; returns accumulated normal impulses.

    Each normal impulse is clamped to be non-negative.  The velocity target
    is the restitution bounce.  Friction is clamped to ``mu`` times the
    normal impulse on two tangent directions.  The Baumgarte push-out
    ``beta/dt (depth - slop)`` is solved separately on pseudo-velocities
    (split impulses), stored in ``scene.pseudo_velocity`` and used only to
    move positions, so penetration recovery adds no kinetic energy.
    Jacobians and effective masses are precomputed; the Gauss-Seidel sweeps
    use plain floats.
    """
    cfg = scene.config
    bodies = scene.bodies
    nb = len(bodies)
    m = len(contacts)
    scene.pseudo_velocity = np.zeros((nb, 6))
    if m == 0:
        return np.zeros(0)
    kin_vel = kin_vel or {}
    inv_m = np.array([b.inv_mass for b in bodies] + [0.0])
    inv_I = np.array([b.world_inertia_inv() for b in bodies] + [np.zeros((3, 3))])
    pos = np.array([b.position for b in bodies] + [np.zeros(3)])
    V = np.zeros((nb + 1, 6))
    for i, b in enumerate(bodies):
        if b.kinematic:
            v, w = kin_vel.get(i, (np.zeros(3), np.zeros(3)))
        else:
            v, w = b.velocity, b.angular_velocity
        V[i, :3], V[i, 3:] = v, w
    A = np.array([c.a for c in contacts])
    B = np.array([c.b if c.b >= 0 else nb for c in contacts])
    P = np.array([c.point for c in contacts])
    N = np.array([c.normal for c in contacts])
    depth = np.array([c.depth for c in contacts])
    ra = P - pos[A]
    rb = np.where((B < nb)[:, None], P - pos[B], 0.0)
    T1, T2 = _tangents(N)
    D = np.stack([N, T1, T2], axis=1)                      # (m, 3 directions, 3)
    ca = np.cross(ra[:, None, :], D)
    cb = np.cross(rb[:, None, :], D)
    Ia = np.einsum("mij,mkj->mki", inv_I[A], ca)
    Ib = np.einsum("mij,mkj->mki", inv_I[B], cb)
    K = (inv_m[A] + inv_m[B])[:, None] + np.einsum("mki,mki->mk", ca, Ia) + np.einsum("mki,mki->mk", cb, Ib)
    # velocity row: rel = J_a . V_a - J_b . V_b with J = (d, r x d)
    Ja = np.concatenate([D, ca], axis=2)
    Jb = np.concatenate([D, cb], axis=2)
    Ua = np.concatenate([inv_m[A][:, None, None] * D, Ia], axis=2)
    Ub = np.concatenate([inv_m[B][:, None, None] * D, Ib], axis=2)
    vn0 = np.einsum("mi,mi->m", Ja[:, 0], V[A]) - np.einsum("mi,mi->m", Jb[:, 0], V[B])
    bounce = np.where(-vn0 > cfg.restitution_threshold, -cfg.restitution * vn0, 0.0)
    bias = cfg.baumgarte / cfg.dt * np.maximum(depth - cfg.slop, 0.0)
    keys = [(c.a, c.b) + tuple(c.feature) for c in contacts]
    J = np.zeros((m, 3))
    if cfg.warm_start:
        for r, key in enumerate(keys):
            if key in scene.warm:
                jn, jt = scene.warm[key]
                J[r] = (jn, jt[0], jt[1])
        # apply warm impulses
        for r in np.nonzero(np.any(J != 0.0, axis=1))[0]:
            V[A[r]] += J[r] @ Ua[r]
            V[B[r]] -= J[r] @ Ub[r]

    Vl = V.tolist()
    Al, Bl = A.tolist(), B.tolist()
    Jal, Jbl, Ual, Ubl = Ja.tolist(), Jb.tolist(), Ua.tolist(), Ub.tolist()
    Kl, tl, Jl = K.tolist(), bounce.tolist(), J.tolist()
    mu = cfg.friction

    def rel(va, vb, ja, jb):
        return (ja[0] * va[0] + ja[1] * va[1] + ja[2] * va[2] + ja[3] * va[3] + ja[4] * va[4] + ja[5] * va[5]
                - jb[0] * vb[0] - jb[1] * vb[1] - jb[2] * vb[2] - jb[3] * vb[3] - jb[4] * vb[4] - jb[5] * vb[5])

    def push(va, vb, ua, ub, d):
        for i in range(6):
            va[i] += ua[i] * d
            vb[i] -= ub[i] * d

    for _ in range(cfg.iterations):
        for r in range(m):
            k = Kl[r]
            if k[0] <= 0.0:
                continue
            va, vb = Vl[Al[r]], Vl[Bl[r]]
            ja, jb, ua, ub, acc = Jal[r], Jbl[r], Ual[r], Ubl[r], Jl[r]
            # friction first, bounded by the current normal impulse
            if mu > 0.0:
                lim = mu * acc[0]
                for t in (1, 2):
                    if k[t] <= 0.0:
                        continue
                    vt = rel(va, vb, ja[t], jb[t])
                    new = min(max(acc[t] - vt / k[t], -lim), lim)
                    d = new - acc[t]
                    acc[t] = new
                    push(va, vb, ua[t], ub[t], d)
            vn = rel(va, vb, ja[0], jb[0])
            new = max(acc[0] + (tl[r] - vn) / k[0], 0.0)
            d = new - acc[0]
            acc[0] = new
            push(va, vb, ua[0], ub[0], d)

    if np.any(bias > 0.0):
        Pl = [[0.0] * 6 for _ in range(nb + 1)]
        acc_p = [0.0] * m
        bl = bias.tolist()
        for _ in range(cfg.iterations):
            for r in range(m):
                k = Kl[r][0]
                if k <= 0.0:
                    continue
                pa, pb = Pl[Al[r]], Pl[Bl[r]]
                vn = rel(pa, pb, Jal[r][0], Jbl[r][0])
                new = max(acc_p[r] + (bl[r] - vn) / k, 0.0)
                push(pa, pb, Ual[r][0], Ubl[r][0], new - acc_p[r])
                acc_p[r] = new
        scene.pseudo_velocity = np.array(Pl[:nb])

    for i, b in enumerate(bodies):
        if not b.kinematic:
            b.velocity = Vl[i][:3]
            b.angular_velocity = Vl[i][3:]
    scene.warm = {key: (acc[0], (acc[1], acc[2])) for key, acc in zip(keys, Jl)}
    return np.array([acc[0] for acc in Jl])


def _check(scene: Scene) -> None:
    for b in scene.bodies:
        for a in (b.position, b.momentum, b.angular_momentum):
            if not np.all(np.isfinite(a)) or np.max(np.abs(a)) > BLOWUP_LIMIT:
                raise NumericalBlowup(f"body {b.cell} state exceeds {BLOWUP_LIMIT:g}")


def step(scene: Scene) -> Scene:
    """Advance the scene by one step of semi-implicit Euler (in place).

    Effects run first and may deactivate springs or add bodies.  Momenta
    take gravity and recall forces, contacts adjust them, then positions and
    rotations move with the new velocities plus the contact position correction.
    """
    for effect in scene.effects:
        effect(scene)
    cfg = scene.config
    dt = cfg.dt
    t = scene.time
    kin_vel = {}
    for i, b in enumerate(scene.bodies):
        if b.kinematic and b.trajectory is not None:
            x, q, vk, wk = b.trajectory.state(t)
            b.position, b.rotation = np.asarray(x, dtype=float), quat_normalize(q)
            kin_vel[i] = (np.asarray(vk, dtype=float), np.asarray(wk, dtype=float))
    forces = np.zeros((len(scene.bodies), 3))
    for i, b in enumerate(scene.bodies):
        if b.kinematic:
            continue
        F = b.mass * scene.gravity
        tau = np.zeros(3)
        spring: RecallSpring | None = scene.springs[i]
        if spring is not None and spring.active:
            Fr, tr = recall_force(spring, b, t)
            forces[i] = Fr
            F = F + Fr
            tau = tau + tr
        b.momentum = b.momentum + F * dt
        b.angular_momentum = b.angular_momentum + tau * dt
    scene.last_recall_force = forces
    contacts = detect_contacts(scene)
    scene.last_contacts = contacts
    scene.last_normal_impulses = solve_contacts(scene, contacts, kin_vel)
    if not contacts:
        scene.warm = {}
    for b, pv in zip(scene.bodies, scene.pseudo_velocity):
        if b.kinematic:
            continue
        b.position = b.position + (b.velocity + pv[:3]) * dt
        w = b.angular_velocity + pv[3:]
        b.rotation = quat_normalize(quat_mul(quat_from_rotvec(w * dt), b.rotation))
    scene.time = t + dt
    scene.step_index += 1
    for i, b in enumerate(scene.bodies):
        if b.kinematic and b.trajectory is not None:
            x, q, _, _ = b.trajectory.state(scene.time)
            b.position, b.rotation = np.asarray(x, dtype=float), quat_normalize(q)
    _check(scene)
    return scene


def run(scene: Scene, n_steps: int, callback=None) -> Scene:
    for _ in range(n_steps):
        step(scene)
        if callback is not None:
            callback(scene)
    return scene


def snapshot(scene: Scene) -> dict:
    """Per-body position, quaternion and spring state at the current time."""
    return {
        "time": scene.time,
        "step": scene.step_index,
        "positions": [b.position.tolist() for b in scene.bodies],
        "rotations": [b.rotation.tolist() for b in scene.bodies],
        "active": [bool(scene.spring_active(i)) for i in range(len(scene.bodies))],
    }


__all__ = ["Scene", "detect_contacts", "run", "snapshot", "solve_contacts", "step"]
