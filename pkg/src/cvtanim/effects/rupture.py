"""Deactivation of a cell when its recall force exceeds a threshold."""
from __future__ import annotations

import numpy as np

from ..simulation.bodies import RecallSpring, RigidBody, recall_force


def rupture_check(body: RigidBody, spring: RecallSpring, threshold: float, t: float) -> bool:
    """True iff the recall force norm at time ``t`` exceeds ``threshold``.

    On true the spring is switched off for good.
    """
    if not spring.active:
        return False
    F, _ = recall_force(spring, body, t)
    if float(np.linalg.norm(F)) > threshold:
        spring.active = False
        return True
    return False


class RuptureEffect:
    """Simulation hook applying :func:`rupture_check` to every sprung body each step."""

    def __init__(self, threshold: float, bodies=None):
        if not threshold > 0.0:
            raise ValueError("rupture threshold must be positive")
        self.threshold = float(threshold)
        self.bodies = None if bodies is None else [int(b) for b in bodies]

    def __call__(self, scene) -> None:
        ids = range(len(scene.bodies)) if self.bodies is None else self.bodies
        for i in ids:
            s = scene.springs[i]
            if s is None or not s.active:
                continue
            F, _ = recall_force(s, scene.bodies[i], scene.time)
            if float(np.linalg.norm(F)) > self.threshold:
                scene.deactivate(i, "rupture")


__all__ = ["RuptureEffect", "rupture_check"]
