from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import RigidTransform
from ..tessellation.types import ClippedCVT


@dataclass(frozen=True)
class TrackingConfig:
    """Tracking parameters; ``None`` means "derive from the template"."""

    n_patches: int | None = None
    window: int = 10
    outer_iterations: int = 20
    theta_max_deg: float = 60.0
    depth_tol: float | None = None
    prior_weight: float = 1.0
    sigma_assoc: float | None = None
    adapt_sigma: bool = True
    sigma_floor: float = 1e-3
    m_best: int = 4
    max_points_per_cell: int = 6
    warm_start_iterations: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_patches is not None and self.n_patches < 1:
            raise ValueError("n_patches must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not 0.0 < self.theta_max_deg < 180.0:
            raise ValueError("theta_max_deg must lie in (0, 180)")
        if self.depth_tol is not None and self.depth_tol <= 0.0:
            raise ValueError("depth_tol must be > 0")
        if self.sigma_floor <= 0.0:
            raise ValueError("sigma_floor must be > 0")
        if self.sigma_assoc is not None and self.sigma_assoc <= 0.0:
            raise ValueError("sigma_assoc must be > 0")
        if self.prior_weight < 0.0:
            raise ValueError("prior_weight must be >= 0")
        if self.m_best < 1 or self.outer_iterations < 0:
            raise ValueError("m_best must be >= 1 and outer_iterations >= 0")


def default_patch_count(n_cells: int) -> int:
    return min(n_cells, max(4, n_cells // 25))


@dataclass(frozen=True, eq=False)
class Patch:
    id: int
    cells: np.ndarray
    medoid: int
    point_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


@dataclass(eq=False)
class Template:
    """Reference model: cells, patches and the per-point attributes used for matching.

    Surface points carry unit normals and depth 0; inner points (the sites)
    carry a zero normal and their distance to the surface.
    """

    cvt: ClippedCVT
    patches: list
    pairs: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    depth: np.ndarray
    is_surface: np.ndarray
    point_patch: np.ndarray
    point_cell: np.ndarray
    cell_patch: np.ndarray
    mean_circumradius: float

    @property
    def n_patches(self) -> int:
        return len(self.patches)


@dataclass(frozen=True, eq=False)
class Observations:
    points: np.ndarray
    normals: np.ndarray
    depth: np.ndarray
    is_surface: np.ndarray

    def __len__(self) -> int:
        return len(self.points)

    def translated(self, t) -> Observations:
        return Observations(self.points + np.asarray(t, dtype=float), self.normals, self.depth, self.is_surface)


@dataclass(frozen=True, eq=False)
class Pose:
    transforms: tuple

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))

    @classmethod
    def identity(cls, n: int) -> Pose:
        return cls(tuple(RigidTransform() for _ in range(n)))

    def __len__(self) -> int:
        return len(self.transforms)

    def __getitem__(self, k: int) -> RigidTransform:
        return self.transforms[k]

    def left_compose(self, G: RigidTransform) -> Pose:
        return Pose(tuple(G @ T for T in self.transforms))

    def to_list(self) -> list:
        return [T.to_list() for T in self.transforms]

    @classmethod
    def from_list(cls, values) -> Pose:
        return cls(tuple(RigidTransform.from_list(v) for v in values))


@dataclass(eq=False)
class PoseSequence:
    poses: list
    mean: Pose | None = None
    energies: list = field(default_factory=list)
    times: np.ndarray | None = None

    def __post_init__(self):
        counts = {len(p) for p in self.poses}
        if self.mean is not None:
            counts.add(len(self.mean))
        if len(counts) > 1:
            raise ValueError("all poses must have the same patch count")

    def __len__(self) -> int:
        return len(self.poses)


@dataclass(frozen=True)
class Association:
    observation: int
    patch: int
    point: int
    weight: float


@dataclass(frozen=True, eq=False)
class Associations:
    """Columnar associations; rows with weight 0 are rejections."""

    obs: np.ndarray
    patch: np.ndarray
    point: np.ndarray
    weight: np.ndarray
    n_obs: int

    def __len__(self) -> int:
        return len(self.obs)

    def as_list(self) -> list[Association]:
        return [Association(int(o), int(k), int(q), float(w))
                for o, k, q, w in zip(self.obs, self.patch, self.point, self.weight)]

    def weight_sums(self) -> np.ndarray:
        return np.bincount(self.obs, weights=self.weight, minlength=self.n_obs)

    def scaled(self, factor: float) -> Associations:
        return Associations(self.obs, self.patch, self.point, self.weight * factor, self.n_obs)
