from .clipping import bisect_surface, clip_cell, clip_diagram, detect_boundary_cells
from .energy import FixedPartitionEnergy, cvt_energy, cvt_energy_gradient
from .lbfgs import LBFGSResult, lbfgs
from .metrics import boundary_triangles, point_to_surface_error, volume_cv
from .optimize import clipped_tessellation, optimize_cvt, project_sites
from .types import (
    BOUNDING_LABEL,
    SURFACE_LABEL,
    ClippedCell,
    ClippedCVT,
    CVTConfig,
    SiteSet,
    VoronoiDiagram,
)
from .voronoi import default_bound_radius, init_sites, voronoi

__all__ = [
    "BOUNDING_LABEL", "SURFACE_LABEL", "ClippedCell", "ClippedCVT", "CVTConfig", "SiteSet",
    "VoronoiDiagram", "bisect_surface", "clip_cell", "clip_diagram", "clipped_tessellation",
    "cvt_energy", "cvt_energy_gradient", "default_bound_radius", "detect_boundary_cells",
    "FixedPartitionEnergy", "init_sites", "lbfgs", "LBFGSResult", "optimize_cvt",
    "point_to_surface_error", "boundary_triangles", "project_sites", "voronoi", "volume_cv",
]
