"""Per-cell deactivation schedules and the simulation hooks that apply them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NEVER = float("inf")


@dataclass(frozen=True, eq=False)
class EffectSchedule:
    """Deactivation time of each cell (``inf`` for never) tagged with the effect kind."""

    times: np.ndarray
    kind: str

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        if np.any(np.isnan(t)) or np.any(t < 0.0):
            raise ValueError("deactivation times must be >= 0")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    def __len__(self) -> int:
        return len(self.times)

    def active(self, t: float) -> np.ndarray:
        """Cells whose spring is still on at time ``t``."""
        return self.times > t

    def order(self) -> np.ndarray:
        """Cells by deactivation time, ties broken by index."""
        return np.lexsort((np.arange(len(self.times)), self.times))

    def shifted(self, offset: float, kind: str | None = None) -> EffectSchedule:
        return EffectSchedule(self.times + offset, kind or self.kind)

    def scaled(self, factor: float) -> EffectSchedule:
        if factor <= 0.0:
            raise ValueError("scale factor must be positive")
        return EffectSchedule(self.times * factor, self.kind)

    def combined(self, other: EffectSchedule) -> EffectSchedule:
        """Earliest of two schedules over the same cells."""
        if len(other) != len(self):
            raise ValueError("schedules cover different cell counts")
        return EffectSchedule(np.minimum(self.times, other.times), f"{self.kind}+{other.kind}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "times": [None if not np.isfinite(t) else float(t) for t in self.times]}

    @classmethod
    def from_dict(cls, d: dict) -> EffectSchedule:
        return cls(np.array([NEVER if t is None else t for t in d["times"]], dtype=float), d["kind"])


class ScheduleEffect:
    """Simulation hook switching off springs once their scheduled time is reached.

    ``bodies[k]`` is the scene body driven by schedule entry ``k``; by
    default entry ``k`` drives body ``k``.
    """

    def __init__(self, schedule: EffectSchedule, bodies=None):
        self.schedule = schedule
        self.bodies = np.arange(len(schedule)) if bodies is None else np.asarray(bodies, dtype=np.int64)
        if len(self.bodies) != len(schedule):
            raise ValueError("one body per schedule entry required")
        order = schedule.order()
        self._order = order[np.isfinite(schedule.times[order])]
        self._next = 0

    def __call__(self, scene) -> None:
        t = scene.time
        # small tolerance so times on the step grid trigger on that step
        eps = 1e-9 * scene.config.dt
        while self._next < len(self._order):
            k = self._order[self._next]
            if self.schedule.times[k] > t + eps:
                break
            scene.deactivate(int(self.bodies[k]), self.schedule.kind)
            self._next += 1


__all__ = ["NEVER", "EffectSchedule", "ScheduleEffect"]
