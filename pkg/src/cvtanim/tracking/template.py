"""Patch clustering and extraction of the reference and observed point sets."""
from __future__ import annotations

import warnings

import numpy as np
from scipy.cluster.vq import kmeans2
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra
from scipy.spatial import cKDTree

from ..errors import TooManyPatches
from ..geometry import OrientedPointCloud, TriangleSet
from ..tessellation.metrics import boundary_triangles
from ..tessellation.types import SURFACE_LABEL, ClippedCVT
from ..tessellation.voronoi import init_sites
from .types import Observations, Patch, Template, TrackingConfig, default_patch_count


def centroid_graph(cvt: ClippedCVT):
    """Sparse symmetric graph on cells weighted by centroid distance."""
    n = len(cvt)
    c = cvt.centroids
    i, j = cvt.adjacency[:, 0], cvt.adjacency[:, 1]
    w = np.linalg.norm(c[i] - c[j], axis=1)
    w = np.maximum(w, 1e-12)
    return coo_matrix((np.r_[w, w], (np.r_[i, j], np.r_[j, i])), shape=(n, n)).tocsr()


def _kmedoids(D: np.ndarray, K: int, rng: np.random.Generator, max_iter: int = 100):
    n = len(D)
    # k-means++ style seeding
    med = [int(rng.integers(n))]
    dmin = D[med[0]].copy()
    for _ in range(1, K):
        p = dmin ** 2
        s = p.sum()
        if not np.isfinite(s) or s <= 0.0:
            rest = np.setdiff1d(np.arange(n), med)
            nxt = int(rest[0])
        else:
            nxt = int(rng.choice(n, p=p / s))
        med.append(nxt)
        dmin = np.minimum(dmin, D[nxt])
    med = np.array(med)
    for _ in range(max_iter):
        label = np.argmin(D[med], axis=0)
        label[med] = np.arange(K)
        new = med.copy()
        for k in range(K):
            members = np.nonzero(label == k)[0]
            cost = D[np.ix_(members, members)].sum(axis=1)
            new[k] = members[int(np.argmin(cost))]
        if np.array_equal(new, med):
            break
        med = new
    label = np.argmin(D[med], axis=0)
    label[med] = np.arange(K)
    cost = float(D[med[label], np.arange(n)].sum())
    return med, label, cost


def _enforce_connectivity(graph, label: np.ndarray, med: np.ndarray, D: np.ndarray) -> np.ndarray:
    label = label.copy()
    K = len(med)
    graph = graph.tocsr()
    for _ in range(len(label)):
        changed = False
        for k in range(K):
            members = np.nonzero(label == k)[0]
            sub = graph[members][:, members]
            ncomp, comp = connected_components(sub, directed=False)
            if ncomp <= 1:
                continue
            keep = comp[np.nonzero(members == med[k])[0][0]]
            for c in range(ncomp):
                if c == keep:
                    continue
                frag = members[comp == c]
                nbr_cells = np.unique(graph[frag].indices)
                nbr_patches = np.setdiff1d(np.unique(label[nbr_cells]), [k])
                if len(nbr_patches) == 0:
                    continue
                cost = [D[med[l], frag].sum() for l in nbr_patches]
                label[frag] = nbr_patches[int(np.argmin(cost))]
                changed = True
        if not changed:
            break
    return label


def cluster_patches(cvt: ClippedCVT, K: int, seed: int = 0, n_init: int = 4) -> list[Patch]:
    """k-medoids on graph-geodesic centroid distances, then connected patches.

    Fragments cut off from their medoid are merged into the adjacent patch
    whose medoid is geodesically closest.
    """
    n = len(cvt)
    if K < 1:
        raise ValueError("K must be >= 1")
    if K > n:
        raise TooManyPatches(f"{K} patches requested for {n} cells")
    graph = centroid_graph(cvt)
    D = dijkstra(graph, directed=False)
    finite = D[np.isfinite(D)]
    D[~np.isfinite(D)] = 10.0 * (finite.max() if finite.size else 1.0) + 1.0
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init if K < n else 1):
        med, label, cost = _kmedoids(D, K, rng)
        if best is None or cost < best[2] - 1e-12:
            best = (med, label, cost)
    med, label, _ = best
    label = _enforce_connectivity(graph, label, med, D)
    return [Patch(k, np.nonzero(label == k)[0], int(med[k])) for k in range(K)]


def patch_pairs(cvt: ClippedCVT, cell_patch: np.ndarray) -> np.ndarray:
    """Ordered neighbouring patch pairs ``(k, l)`` with ``k != l``."""
    a = cell_patch[cvt.adjacency[:, 0]]
    b = cell_patch[cvt.adjacency[:, 1]]
    m = a != b
    pairs = {(int(x), int(y)) for x, y in zip(a[m], b[m])}
    pairs |= {(y, x) for x, y in pairs}
    return np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)


def _farthest_point_subset(P: np.ndarray, m: int, center: np.ndarray) -> np.ndarray:
    if len(P) <= m:
        return np.arange(len(P))
    chosen = [int(np.argmax(np.linalg.norm(P - center, axis=1)))]
    d = np.linalg.norm(P - P[chosen[0]], axis=1)
    for _ in range(m - 1):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.linalg.norm(P - P[nxt], axis=1))
    return np.array(chosen)


def cell_surface_points(cvt: ClippedCVT, max_per_cell: int | None = None):
    """Surface vertices of boundary cells with area-weighted outward normals.

    Returns ``(points, normals, cell_index)``; at most ``max_per_cell`` per
    cell, chosen by farthest-point sampling.
    """
    pts, nrm, owner = [], [], []
    for i, cc in enumerate(cvt.cells):
        P = cc.cell
        if P.face_labels is None:
            continue
        surf = np.nonzero(P.face_labels == SURFACE_LABEL)[0]
        if len(surf) == 0:
            continue
        va = P._face_vector_areas()
        acc = np.zeros((len(P.vertices), 3))
        for f in surf:
            acc[P.faces[f]] += va[f]
        norm = np.linalg.norm(acc, axis=1)
        ids = np.nonzero(norm > 0.0)[0]
        if len(ids) == 0:
            continue
        if max_per_cell is not None:
            ids = ids[_farthest_point_subset(P.vertices[ids], max_per_cell, cc.centroid)]
        pts.append(P.vertices[ids])
        nrm.append(acc[ids] / norm[ids, None])
        owner.append(np.full(len(ids), i))
    if not pts:
        return np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    return np.concatenate(pts), np.concatenate(nrm), np.concatenate(owner)


def site_depths(cvt: ClippedCVT, points=None) -> np.ndarray:
    """Distance from each site (or given points) to the tessellation boundary."""
    a, b, c = boundary_triangles(cvt)
    p = cvt.sites if points is None else np.asarray(points, dtype=float).reshape(-1, 3)
    return TriangleSet(a, b, c).distance(p)


def observations_from_cvt(cvt: ClippedCVT, max_per_cell: int | None = None) -> Observations:
    """Inner points are the sites, surface points the boundary samples of the cells."""
    sp, sn, _ = cell_surface_points(cvt, max_per_cell)
    depth = site_depths(cvt)
    pts = np.concatenate([cvt.sites, sp])
    nrm = np.concatenate([np.zeros_like(cvt.sites), sn])
    d = np.concatenate([depth, np.zeros(len(sp))])
    surf = np.r_[np.zeros(len(cvt.sites), dtype=bool), np.ones(len(sp), dtype=bool)]
    return Observations(pts, nrm, d, surf)


def observation_sites(volume, n: int, seed: int = 0, iterations: int = 10, samples_per_site: int = 20) -> np.ndarray:
    """Inner observation points: Lloyd iterations on uniform samples of ``volume``.

    This is a sampled stand-in for the sites of a per-frame tessellation,
    cheap enough to run on every captured frame.
    """
    if n < 1:
        raise ValueError("need at least one site")
    data = init_sites(volume, n * samples_per_site, seed + 1).sites
    init = init_sites(volume, n, seed).sites
    if iterations == 0:
        return init
    with warnings.catch_warnings():
        # an emptied cluster keeps its previous centre
        warnings.simplefilter("ignore", UserWarning)
        centers, _ = kmeans2(data, init, iter=iterations, minit="matrix", missing="warn")
    return centers


def observations_from_cloud(cloud: OrientedPointCloud, inner_points) -> Observations:
    """Surface points from an oriented cloud; inner depths measured to the cloud."""
    inner = np.asarray(inner_points, dtype=float).reshape(-1, 3)
    depth = cKDTree(cloud.points).query(inner)[0] if len(inner) else np.zeros(0)
    pts = np.concatenate([inner, cloud.points])
    nrm = np.concatenate([np.zeros_like(inner), cloud.normals])
    d = np.concatenate([depth, np.zeros(len(cloud.points))])
    surf = np.r_[np.zeros(len(inner), dtype=bool), np.ones(len(cloud.points), dtype=bool)]
    return Observations(pts, nrm, d, surf)


def build_template(cvt: ClippedCVT, config: TrackingConfig | None = None,
                   patches: list[Patch] | None = None) -> Template:
    config = config or TrackingConfig()
    n = len(cvt)
    if patches is None:
        K = config.n_patches if config.n_patches is not None else default_patch_count(n)
        patches = cluster_patches(cvt, K, config.seed)
    cell_patch = np.empty(n, dtype=np.int64)
    for p in patches:
        cell_patch[p.cells] = p.id
    obs = observations_from_cvt(cvt, config.max_points_per_cell)
    point_cell = np.r_[np.arange(n), cell_surface_points(cvt, config.max_points_per_cell)[2]]
    point_patch = cell_patch[point_cell]
    patches = [Patch(p.id, p.cells, p.medoid, np.nonzero(point_patch == p.id)[0]) for p in patches]
    return Template(cvt, patches, patch_pairs(cvt, cell_patch), obs.points, obs.normals, obs.depth,
                    obs.is_surface, point_patch, point_cell, cell_patch, cvt.mean_circumradius())
