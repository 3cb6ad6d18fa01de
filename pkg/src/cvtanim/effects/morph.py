"""Cell matching and convex shape interpolation for morphing between tessellations."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import ConvexPolyhedron, RigidTransform, convex_hull, icosphere, polyhedron_moments
from ..tessellation.types import ClippedCVT
from .erosion import centroid_depths


@dataclass(frozen=True, eq=False)
class MorphPlan:
    """Source cell ``source[k]`` morphs into ``target[k]`` over ``[start[k], start[k] + duration]``."""

    source: np.ndarray
    target: np.ndarray
    start: np.ndarray
    duration: float

    def __post_init__(self):
        s = np.asarray(self.source, dtype=np.int64)
        t = np.asarray(self.target, dtype=np.int64)
        st = np.asarray(self.start, dtype=float)
        if not (len(s) == len(t) == len(st)):
            raise ValueError("plan arrays must have equal length")
        if not self.duration > 0.0 or np.any(st < 0.0):
            raise ValueError("start times must be >= 0 and duration > 0")
        for name, a in (("source", s), ("target", t), ("start", st)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.source)

    def progress(self, t: float) -> np.ndarray:
        """Interpolation parameter of every pair at time ``t``."""
        return np.clip((t - self.start) / self.duration, 0.0, 1.0)

    @property
    def end_time(self) -> float:
        return float(self.start.max(initial=0.0)) + self.duration

    def to_dict(self) -> dict:
        return {"source": self.source.tolist(), "target": self.target.tolist(),
                "start": self.start.tolist(), "duration": self.duration}


def proportional_map(n: int, m: int) -> np.ndarray:
    """Rank ``i`` of ``n`` to rank ``round(i (m - 1) / (n - 1))`` of ``m``, halves rounded up."""
    if n < 1 or m < 1:
        raise ValueError("both sides need at least one cell")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    return np.floor(np.arange(n) * (m - 1) / (n - 1) + 0.5).astype(np.int64)


def match_cells_for_morph(source: ClippedCVT, target: ClippedCVT, start: float = 0.0, duration: float = 1.0,
                          spread: float | None = None, sequence_length: float | None = None,
                          source_depths=None, target_depths=None) -> MorphPlan:
    """Pair source cells from the outside in with target cells from the inside out.

    Start times are spaced evenly over ``spread`` (default ``duration``) in
    source order, so the outermost source cell starts first.
    """
    ds = centroid_depths(source) if source_depths is None else np.asarray(source_depths, dtype=float)
    dt = centroid_depths(target) if target_depths is None else np.asarray(target_depths, dtype=float)
    n, m = len(ds), len(dt)
    if n == 0 or m == 0:
        raise ValueError("both tessellations must be nonempty")
    src_order = np.lexsort((np.arange(n), ds))
    tgt_order = np.lexsort((np.arange(m), -dt))
    ranks = proportional_map(n, m)
    spread = duration if spread is None else float(spread)
    frac = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
    starts = start + spread * frac
    plan = MorphPlan(src_order, tgt_order[ranks], starts, duration)
    if sequence_length is not None and plan.end_time > sequence_length + 1e-12:
        raise ValueError("morph does not fit in the sequence")
    return plan


@dataclass(frozen=True, eq=False)
class MorphedCell:
    """Interpolated shape about the origin and the position of its centroid."""

    shape: ConvexPolyhedron
    position: np.ndarray

    def world(self) -> ConvexPolyhedron:
        return self.shape.translated(self.position)


MORPH_DIRECTIONS = icosphere(2).vertices


def _posed_local(P, pose: RigidTransform | None):
    poly = P.cell if hasattr(P, "cell") else P
    _, c, _ = polyhedron_moments(poly)
    V = poly.vertices - c
    if pose is None:
        return V, c
    return pose.apply_vector(V), pose.apply(c)


def morph_cell(src, src_pose: RigidTransform | None, dst, dst_pose: RigidTransform | None, u: float,
               directions=None) -> MorphedCell:
    """Shape whose support function is ``(1 - u) h_src + u h_dst`` in centroid frames.

    By default the support functions are combined in every direction, which
    yields the Minkowski combination of the two posed cells.  Passing an
    array of unit ``directions`` (or ``"icosphere"`` for the 162-direction
    set) samples the support points along those directions only.
    """
    if not 0.0 <= u <= 1.0:
        raise ValueError("u must lie in [0, 1]")
    Vs, cs = _posed_local(src, src_pose)
    Vd, cd = _posed_local(dst, dst_pose)
    position = (1.0 - u) * cs + u * cd
    if directions is not None:
        D = MORPH_DIRECTIONS if isinstance(directions, str) else np.asarray(directions, dtype=float).reshape(-1, 3)
        Vs = Vs[np.argmax(D @ Vs.T, axis=1)]
        Vd = Vd[np.argmax(D @ Vd.T, axis=1)]
        pts = (1.0 - u) * Vs + u * Vd
    elif u == 0.0:
        pts = Vs
    elif u == 1.0:
        pts = Vd
    else:
        pts = ((1.0 - u) * Vs[:, None, :] + u * Vd[None, :, :]).reshape(-1, 3)
    return MorphedCell(convex_hull(pts), position)


__all__ = ["MORPH_DIRECTIONS", "MorphPlan", "MorphedCell", "match_cells_for_morph", "morph_cell", "proportional_map"]
