"""Restriction of Voronoi cells to an implicit volume.

Boundary cells are detected by their vertices.  For each of them the
facets (and facet edges) are discretised; every sample segment that crosses
the surface, and every ray from the site to an outside sample, is bisected
on the indicator to locate surface points.  The clipped cell is the convex
hull of the inside vertices and those surface points.  Volumes described by
half-spaces are clipped exactly instead.
"""
from __future__ import annotations

import numpy as np

from ..errors import DegenerateInput, EmptyIntersection
from ..geometry import (
    ConvexPolyhedron,
    clip_polyhedron,
    convex_hull,
    halfspace_polyhedron,
    label_faces,
)
from ..volumes import ImplicitVolume
from .types import BOUNDING_LABEL, SURFACE_LABEL, ClippedCell, ClippedCVT, VoronoiDiagram

BISECTION_TOL = 1e-8


def detect_boundary_cells(diagram: VoronoiDiagram, volume: ImplicitVolume) -> set[int]:
    """Indices of cells with at least one vertex outside ``volume``."""
    out = set()
    for i, cell in enumerate(diagram.cells):
        if not np.all(volume.inside(cell.vertices)):
            out.add(i)
    return out


def _face_samples(P: ConvexPolyhedron, resolution: int):
    """Grid and edge samples on every face, with the sample segments joining them."""
    pts: list[np.ndarray] = []
    segs: list[np.ndarray] = []
    offset = 0
    V = P.vertices
    normals = P.face_normals()
    for f, nrm in zip(P.faces, normals):
        poly = V[f]
        m = len(f)
        # edge samples, endpoints included
        t = np.linspace(0.0, 1.0, resolution + 1)[:-1]
        a = poly
        b = np.roll(poly, -1, axis=0)
        edge = (a[:, None, :] + t[None, :, None] * (b - a)[:, None, :]).reshape(-1, 3)
        ne = len(edge)
        e_idx = np.arange(ne)
        pts.append(edge)
        segs.append(np.stack([offset + e_idx, offset + (e_idx + 1) % ne], axis=1))
        offset += ne
        # grid over the face's bounding rectangle, kept inside the polygon
        c = poly.mean(0)
        u = poly[0] - c
        un = np.linalg.norm(u)
        if un < 1e-300:
            continue
        u /= un
        w = np.cross(nrm, u)
        uv = np.stack([(poly - c) @ u, (poly - c) @ w], axis=1)
        lo, hi = uv.min(0), uv.max(0)
        gu = np.linspace(lo[0], hi[0], resolution + 2)[1:-1]
        gw = np.linspace(lo[1], hi[1], resolution + 2)[1:-1]
        GU, GW = np.meshgrid(gu, gw, indexing="ij")
        q = np.stack([GU.ravel(), GW.ravel()], axis=1)
        e2 = np.roll(uv, -1, axis=0) - uv
        cross = e2[:, 0][None, :] * (q[:, None, 1] - uv[None, :, 1]) - e2[:, 1][None, :] * (q[:, None, 0] - uv[None, :, 0])
        inside = np.all(cross >= -1e-12 * (hi - lo).max() ** 2, axis=1).reshape(resolution, resolution)
        ids = -np.ones((resolution, resolution), dtype=np.int64)
        k = int(inside.sum())
        if k == 0:
            continue
        ids[inside] = offset + np.arange(k)
        grid_pts = c + GU[inside][:, None] * u + GW[inside][:, None] * w
        pts.append(grid_pts)
        for A, B in ((ids[:-1, :], ids[1:, :]), (ids[:, :-1], ids[:, 1:])):
            ok = (A >= 0) & (B >= 0)
            if np.any(ok):
                segs.append(np.stack([A[ok], B[ok]], axis=1))
        offset += k
        del m
    P_all = np.concatenate(pts) if pts else np.zeros((0, 3))
    S_all = np.concatenate(segs) if segs else np.zeros((0, 2), dtype=np.int64)
    return P_all, S_all


def bisect_surface(volume: ImplicitVolume, inner: np.ndarray, outer: np.ndarray, tol: float) -> np.ndarray:
    """Locate indicator crossings on segments ``inner -> outer``; returns inside endpoints."""
    a = np.array(inner, dtype=float, copy=True)
    b = np.array(outer, dtype=float, copy=True)
    if len(a) == 0:
        return a
    length = float(np.max(np.linalg.norm(b - a, axis=1)))
    steps = int(np.ceil(np.log2(max(length / tol, 1.0)))) + 1
    for _ in range(steps):
        mid = 0.5 * (a + b)
        ins = volume.inside(mid)
        a[ins] = mid[ins]
        b[~ins] = mid[~ins]
    return a


def _exact_clip(cell: ConvexPolyhedron, volume: ImplicitVolume, site: np.ndarray) -> ClippedCell:
    n, d = volume.halfspaces
    try:
        clipped = clip_polyhedron(cell, n, d, np.full(len(n), SURFACE_LABEL))
    except DegenerateInput:
        raise EmptyIntersection("cell does not intersect the volume") from None
    on_surface = np.zeros(len(clipped.vertices), dtype=bool)
    for f, lab in zip(clipped.faces, clipped.face_labels):
        if lab == SURFACE_LABEL:
            on_surface[f] = True
    return ClippedCell(clipped, site, True, clipped.vertices[on_surface])


def _truncate_to_bounds(cell: ConvexPolyhedron, volume: ImplicitVolume, site) -> ConvexPolyhedron:
    lo, hi = volume.bounds()
    pad = 1e-3 * float(np.linalg.norm(hi - lo))
    lo, hi = lo - pad, hi + pad
    if np.all(cell.vertices >= lo) and np.all(cell.vertices <= hi):
        return cell
    eye = np.eye(3)
    interior = None
    if site is not None and np.all(site > lo) and np.all(site < hi) and np.all(cell.contains(site.reshape(1, 3), tol=-1e-9)):
        interior = site
    try:
        return clip_polyhedron(cell, np.vstack([eye, -eye]), np.concatenate([hi, -lo]),
                               np.full(6, BOUNDING_LABEL), interior=interior)
    except DegenerateInput:
        raise EmptyIntersection("cell lies outside the volume bounds") from None


def clip_cell(cell: ConvexPolyhedron, volume: ImplicitVolume, resolution: int = 8,
              site=None) -> ClippedCell:
    """Clip one Voronoi cell against ``volume``.

    Raises EmptyIntersection when neither a vertex nor any facet sample of
    the cell lies inside the volume.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    site = cell.volume_centroid()[1] if site is None else np.asarray(site, dtype=float)
    inside_v = volume.inside(cell.vertices)
    if np.all(inside_v):
        return ClippedCell(cell, site, False)
    if volume.halfspaces is not None:
        return _exact_clip(cell, volume, site)

    work = _truncate_to_bounds(cell, volume, site)
    tol = BISECTION_TOL * work.diameter
    inside_v = volume.inside(work.vertices)
    samples, segs = _face_samples(work, resolution)
    ins = volume.inside(samples) if len(samples) else np.zeros(0, dtype=bool)

    surface = []
    if len(segs):
        cross = ins[segs[:, 0]] != ins[segs[:, 1]]
        s = segs[cross]
        if len(s):
            a_in = ins[s[:, 0]]
            inner = np.where(a_in[:, None], samples[s[:, 0]], samples[s[:, 1]])
            outer = np.where(a_in[:, None], samples[s[:, 1]], samples[s[:, 0]])
            surface.append(bisect_surface(volume, inner, outer, tol))
    site_in = bool(volume.inside(site.reshape(1, 3))[0]) and bool(work.contains(site.reshape(1, 3))[0])
    if site_in:
        outside = np.concatenate([samples[~ins], work.vertices[~inside_v]])
        if len(outside):
            inner = np.broadcast_to(site, outside.shape)
            surface.append(bisect_surface(volume, inner, outside, tol))
    surface_pts = np.concatenate(surface) if surface else np.zeros((0, 3))
    support = np.concatenate([work.vertices[inside_v], surface_pts])
    if len(support) == 0:
        raise EmptyIntersection("no inside vertex and no surface crossing")
    try:
        hull = convex_hull(support)
    except DegenerateInput:
        raise EmptyIntersection("intersection has no volume") from None
    pn, pd = work.planes()
    labels = label_faces(hull, pn, pd, work.face_labels, default=SURFACE_LABEL)
    clipped = ConvexPolyhedron(hull.vertices, hull.faces, labels)
    return ClippedCell(clipped, site, True, surface_pts)


def clip_diagram(diagram: VoronoiDiagram, volume: ImplicitVolume, resolution: int = 8) -> ClippedCVT:
    """Clip every cell; adjacency keeps Voronoi pairs that still share a facet."""
    cells = [clip_cell(c, volume, resolution, site=diagram.sites[i]) for i, c in enumerate(diagram.cells)]
    voronoi_pairs = {tuple(p) for p in diagram.adjacency.tolist()}
    pairs = set()
    for i, cc in enumerate(cells):
        lab = cc.cell.face_labels
        if lab is None:
            continue
        areas = cc.cell.face_areas()
        min_area = 1e-10 * cc.cell.diameter ** 2
        for l, a in zip(lab, areas):
            if l >= 0 and a > min_area:
                key = (min(i, int(l)), max(i, int(l)))
                if key in voronoi_pairs:
                    pairs.add(key)
    adjacency = np.array(sorted(pairs), dtype=np.int64).reshape(-1, 2)
    return ClippedCVT(diagram.sites.copy(), cells, adjacency)


def boundary_polyhedron_check(cell: ClippedCell) -> bool:
    """Whether every boundary sample lies inside the clipped cell (hull contract)."""
    if len(cell.boundary_samples) == 0:
        return True
    return bool(np.all(cell.cell.contains(cell.boundary_samples, tol=1e-7)))


__all__ = [
    "detect_boundary_cells",
    "clip_cell",
    "clip_diagram",
    "bisect_surface",
    "halfspace_polyhedron",
]
