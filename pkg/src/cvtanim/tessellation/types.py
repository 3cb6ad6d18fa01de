from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import ConvexPolyhedron, polyhedron_moments

SURFACE_LABEL = -1
BOUNDING_LABEL = -2


@dataclass(frozen=True)
class CVTConfig:
    n_sites: int = 500
    iterations: int = 10
    clip_resolution: int = 8
    seed: int = 0
    lbfgs_memory: int = 7
    lbfgs_steps: int = 5

    def __post_init__(self):
        if self.n_sites < 1:
            raise ValueError("n_sites must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.clip_resolution < 2:
            raise ValueError("clip_resolution must be >= 2")


@dataclass(frozen=True, eq=False)
class SiteSet:
    sites: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.sites)


@dataclass(frozen=True, eq=False)
class VoronoiDiagram:
    """Bounded Voronoi cells; face labels hold the neighbouring site index."""

    sites: np.ndarray
    cells: list
    adjacency: np.ndarray
    bound_center: np.ndarray
    bound_radius: float

    def __len__(self) -> int:
        return len(self.cells)


@dataclass(eq=False)
class ClippedCell:
    cell: ConvexPolyhedron
    site: np.ndarray
    is_boundary: bool = False
    boundary_samples: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        self.site = np.asarray(self.site, dtype=float)
        self.boundary_samples = np.asarray(self.boundary_samples, dtype=float).reshape(-1, 3)
        self.volume, self.centroid, cov = polyhedron_moments(self.cell)
        # ∫|x - c|² over the cell
        self.inertia_trace = float(np.trace(cov))
        self.covariance = cov

    @property
    def circumradius(self) -> float:
        return float(np.max(np.linalg.norm(self.cell.vertices - self.centroid, axis=1)))

    def surface_faces(self) -> np.ndarray:
        lab = self.cell.face_labels
        if lab is None:
            return np.zeros(0, dtype=np.int64)
        return np.nonzero(lab < 0)[0]


@dataclass(eq=False)
class ClippedCVT:
    sites: np.ndarray
    cells: list
    adjacency: np.ndarray
    energy_history: list = field(default_factory=list)

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=float).reshape(-1, 3)
        self.adjacency = np.asarray(self.adjacency, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.cells)

    @property
    def volumes(self) -> np.ndarray:
        return np.array([c.volume for c in self.cells])

    @property
    def centroids(self) -> np.ndarray:
        return np.array([c.centroid for c in self.cells]).reshape(-1, 3)

    @property
    def inertia_traces(self) -> np.ndarray:
        return np.array([c.inertia_trace for c in self.cells])

    @property
    def boundary_mask(self) -> np.ndarray:
        return np.array([c.is_boundary for c in self.cells], dtype=bool)

    def neighbors(self) -> list[list[int]]:
        nb = [[] for _ in range(len(self.cells))]
        for i, j in self.adjacency:
            nb[i].append(int(j))
            nb[j].append(int(i))
        return [sorted(x) for x in nb]

    def mean_circumradius(self) -> float:
        return float(np.mean([c.circumradius for c in self.cells]))

    def with_sites(self, sites) -> ClippedCVT:
        return ClippedCVT(np.asarray(sites, dtype=float), self.cells, self.adjacency, list(self.energy_history))
