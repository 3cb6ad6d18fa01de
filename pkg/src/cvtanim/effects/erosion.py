"""Erosion: cells lose control after a delay proportional to their depth."""
from __future__ import annotations

import numpy as np

from ..geometry import TriangleSet
from ..tessellation.metrics import boundary_triangles
from ..tessellation.types import ClippedCVT
from .schedule import EffectSchedule


def centroid_depths(cvt: ClippedCVT) -> np.ndarray:
    """Euclidean distance from each cell centroid to the boundary facets of the tessellation."""
    a, b, c = boundary_triangles(cvt)
    return TriangleSet(a, b, c).distance(cvt.centroids)


def erosion_schedule(cvt: ClippedCVT | None = None, speed: float = 0.05, depths=None) -> EffectSchedule:
    """Deactivation time ``depth / speed`` per cell, depths measured once on the template."""
    if not speed > 0.0:
        raise ValueError("erosion speed must be positive")
    if depths is None:
        if cvt is None:
            raise ValueError("need a tessellation or precomputed depths")
        depths = centroid_depths(cvt)
    d = np.asarray(depths, dtype=float)
    if np.any(d < 0.0):
        raise ValueError("depths must be >= 0")
    return EffectSchedule(d / speed, "erosion")


__all__ = ["centroid_depths", "erosion_schedule"]
