"""Time persistence: slowed, eroding copies spawned at regular intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..simulation.bodies import RecallSpring, default_spring
from .schedule import NEVER, EffectSchedule, ScheduleEffect


@dataclass(frozen=True, eq=False)
class GhostInstance:
    """A copy replaying the source poses at ``t_s + s (t - t_s)``.

    ``schedule`` holds absolute deactivation times of the copy's cells.
    """

    spawn_time: float
    slowdown: float
    lifetime: float
    sequence_length: float
    schedule: EffectSchedule | None = None

    def __post_init__(self):
        if not 0.0 < self.slowdown <= 1.0:
            raise ValueError("slowdown must lie in (0, 1]")
        if self.spawn_time < 0.0 or not self.lifetime > 0.0:
            raise ValueError("spawn time must be >= 0 and lifetime > 0")

    def playback_time(self, t: float) -> float:
        """Source time displayed at time ``t``, held at the sequence end."""
        tp = self.spawn_time + self.slowdown * (max(t, self.spawn_time) - self.spawn_time)
        return min(tp, self.sequence_length)

    def alive(self, t: float) -> bool:
        return self.spawn_time <= t < self.spawn_time + self.lifetime


def spawn_ghosts(sequence_length: float, interval: float, slowdown: float, lifetime: float = NEVER,
                 depths=None) -> list[GhostInstance]:
    """Ghosts at ``interval, 2 interval, ...`` up to the sequence length.

    With ``depths`` each ghost carries an erosion schedule scaled so that
    its deepest cell deactivates exactly at the end of its lifetime.
    """
    if not interval > 0.0:
        raise ValueError("interval must be positive")
    count = int(math.floor(sequence_length / interval + 1e-12))
    ghosts = []
    for k in range(1, count + 1):
        ts = k * interval
        sched = None
        if depths is not None:
            d = np.asarray(depths, dtype=float)
            if math.isfinite(lifetime):
                dmax = float(d.max()) if len(d) and d.max() > 0.0 else 1.0
                sched = EffectSchedule(ts + lifetime * d / dmax, "persistence")
            else:
                sched = EffectSchedule(np.full(len(d), NEVER), "persistence")
        ghosts.append(GhostInstance(ts, slowdown, lifetime, sequence_length, sched))
    return ghosts


@dataclass(frozen=True, eq=False)
class GhostTrajectory:
    """Source trajectory seen through a ghost's playback clock."""

    source: object
    ghost: GhostInstance

    def state(self, t: float):
        g = self.ghost
        tp = g.playback_time(t)
        x, q, v, w = self.source.state(tp)
        if t < g.spawn_time or tp >= g.sequence_length:
            return x, q, np.zeros(3), np.zeros(3)
        return x, q, g.slowdown * np.asarray(v), g.slowdown * np.asarray(w)


class GhostSpawner:
    """Simulation hook adding each ghost's bodies at its spawn time.

    ``sources`` lists the bodies to copy and ``trajectories`` their acquired
    trajectories.  Ghost springs use ``spring_factory(body, trajectory)``.
    Each ghost gets its own collision group, so it collides with itself
    and the ground but not with the original or other ghosts.
    """

    def __init__(self, ghosts: list[GhostInstance], sources: list, trajectories: list,
                 spring_factory=default_spring):
        if len(sources) != len(trajectories):
            raise ValueError("one trajectory per source body required")
        self.ghosts = sorted(ghosts, key=lambda g: g.spawn_time)
        self.sources = sources
        self.trajectories = trajectories
        self.spring_factory = spring_factory
        self.spawned: list[list[int]] = []
        self._schedules: list[ScheduleEffect] = []

    def __call__(self, scene) -> None:
        eps = 1e-9 * scene.config.dt
        while len(self.spawned) < len(self.ghosts) and self.ghosts[len(self.spawned)].spawn_time <= scene.time + eps:
            g = self.ghosts[len(self.spawned)]
            ids = []
            for src, traj in zip(self.sources, self.trajectories):
                gt = GhostTrajectory(traj, g)
                x, q, v, w = gt.state(scene.time)
                b = src.copy()
                b.group = src.group + len(self.spawned) + 1
                b.position, b.rotation = np.asarray(x, dtype=float), np.asarray(q, dtype=float)
                b.velocity = v
                b.angular_velocity = w
                spring: RecallSpring = self.spring_factory(b, gt)
                ids.append(scene.add_body(b, spring))
            self.spawned.append(ids)
            if g.schedule is not None:
                self._schedules.append(ScheduleEffect(g.schedule, ids))
        for s in self._schedules:
            s(scene)


__all__ = ["GhostInstance", "GhostSpawner", "GhostTrajectory", "spawn_ghosts"]
