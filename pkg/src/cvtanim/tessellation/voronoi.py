from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from ..errors import DuplicateSites, VolumeTooSmall
from ..geometry import halfspace_polyhedron
from ..volumes import ImplicitVolume
from .types import BOUNDING_LABEL, SiteSet, VoronoiDiagram

MIN_SITE_SEPARATION = 1e-9
ALL_PAIRS_LIMIT = 32


def init_sites(volume: ImplicitVolume, n: int, seed: int = 0, batch: int = 4096,
               max_draws: int = 10_000_000) -> SiteSet:
    """Rejection-sample ``n`` sites uniformly inside ``volume``.

    Candidates are drawn in the bounding box relative to its centre, so a
    rigidly translated volume yields translated sites for the same seed.
    """
    if n < 1:
        raise ValueError("need at least one site")
    rng = np.random.default_rng(seed)
    lo, hi = volume.bounds()
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    accepted: list[np.ndarray] = []
    count = 0
    draws = 0
    while count < n:
        if draws >= max_draws or (draws >= 1_000_000 and count < 1e-6 * draws):
            raise VolumeTooSmall(f"accepted {count} of {draws} samples")
        u = rng.uniform(-1.0, 1.0, size=(batch, 3))
        cand = center + u * half
        draws += batch
        ok = volume.inside(cand)
        if np.any(ok):
            accepted.append(cand[ok])
            count += int(ok.sum())
    sites = np.concatenate(accepted)[:n]
    return SiteSet(sites, seed)


def _neighbor_lists(sites: np.ndarray) -> list[np.ndarray]:
    n = len(sites)
    if n <= ALL_PAIRS_LIMIT:
        return [np.delete(np.arange(n), i) for i in range(n)]
    try:
        tri = Delaunay(sites)
    except QhullError:
        return [np.delete(np.arange(n), i) for i in range(n)]
    indptr, indices = tri.vertex_neighbor_vertices
    out = []
    for i in range(n):
        nb = np.unique(indices[indptr[i]:indptr[i + 1]])
        out.append(nb[nb != i])
    return out


def check_sites(sites: np.ndarray) -> None:
    if len(sites) > 1:
        pairs = cKDTree(sites).query_pairs(MIN_SITE_SEPARATION)
        if pairs:
            raise DuplicateSites(f"{len(pairs)} site pair(s) closer than {MIN_SITE_SEPARATION}")


def voronoi_cell(sites: np.ndarray, i: int, neighbors: np.ndarray, center: np.ndarray,
                 bound_radius: float):
    x = sites[i]
    nb = np.asarray(neighbors, dtype=np.int64)
    diff = sites[nb] - x
    # bisector half-space: (x_j - x_i)·p <= (|x_j|² - |x_i|²)/2
    off = 0.5 * np.einsum("ij,ij->i", diff, sites[nb] + x)
    eye = np.eye(3)
    box_n = np.vstack([eye, -eye])
    box_d = np.concatenate([center + bound_radius, -(center - bound_radius)])
    normals = np.vstack([diff, box_n])
    offsets = np.concatenate([off, box_d])
    labels = np.concatenate([nb, np.full(6, BOUNDING_LABEL)])
    return halfspace_polyhedron(normals, offsets, labels, interior=x, default_label=BOUNDING_LABEL)


def voronoi(sites, bound_radius: float, center=None) -> VoronoiDiagram:
    """Voronoi cells of ``sites`` truncated to a cube of half-width ``bound_radius``.

    Each cell is the intersection of the bisector half-spaces towards its
    Delaunay neighbours (which equals the intersection towards all sites)
    and the bounding cube.  Adjacency lists every pair sharing a facet of
    positive area.
    """
    X = sites.sites if isinstance(sites, SiteSet) else np.asarray(sites, dtype=float).reshape(-1, 3)
    check_sites(X)
    center = X.mean(0) if center is None else np.asarray(center, dtype=float)
    if np.any(np.abs(X - center) >= bound_radius):
        raise ValueError("bound_radius does not enclose all sites")
    nbrs = _neighbor_lists(X)
    cells = []
    pairs = set()
    for i in range(len(X)):
        cell = voronoi_cell(X, i, nbrs[i], center, bound_radius)
        cells.append(cell)
        areas = cell.face_areas()
        min_area = 1e-10 * cell.diameter ** 2
        for lab, a in zip(cell.face_labels, areas):
            if lab >= 0 and a > min_area:
                pairs.add((min(i, int(lab)), max(i, int(lab))))
    adjacency = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return VoronoiDiagram(X, cells, adjacency, center, float(bound_radius))


def default_bound_radius(volume: ImplicitVolume) -> float:
    """Half-width strictly greater than the bounding-sphere diameter."""
    return 2.0 * volume.radius * 1.05
