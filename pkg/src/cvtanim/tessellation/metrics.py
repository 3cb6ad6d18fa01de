from __future__ import annotations

import numpy as np

from ..geometry import OrientedPointCloud, TriangleSet
from .types import ClippedCVT


def boundary_triangles(cvt: ClippedCVT) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corners of all cell facets not shared with an adjacent cell."""
    adj = {tuple(p) for p in cvt.adjacency.tolist()}
    A, B, C = [], [], []
    for i, cc in enumerate(cvt.cells):
        P = cc.cell
        tri, owner = P.triangles()
        lab = P.face_labels if P.face_labels is not None else np.full(P.n_faces, -1)
        keep = np.array([
            lab[f] < 0 or (min(i, int(lab[f])), max(i, int(lab[f]))) not in adj for f in range(P.n_faces)
        ], dtype=bool)
        t = tri[keep[owner]]
        if len(t):
            A.append(P.vertices[t[:, 0]])
            B.append(P.vertices[t[:, 1]])
            C.append(P.vertices[t[:, 2]])
    if not A:
        z = np.zeros((0, 3))
        return z, z, z
    return np.concatenate(A), np.concatenate(B), np.concatenate(C)


def point_to_surface_error(cloud, cvt: ClippedCVT) -> float:
    """Sum of distances from the cloud points to the boundary surface of the cells."""
    pts = cloud.points if isinstance(cloud, OrientedPointCloud) else np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("empty point cloud")
    a, b, c = boundary_triangles(cvt)
    return float(TriangleSet(a, b, c).distance(pts).sum())


def volume_cv(cvt: ClippedCVT) -> float:
    """Coefficient of variation of cell volumes."""
    v = cvt.volumes
    return float(v.std() / v.mean())
