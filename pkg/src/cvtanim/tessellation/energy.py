"""CVT quantisation energy with unit density.

For a convex cell of volume ``m``, centroid ``c`` and ``J = ∫|x - c|²``,
``∫|x - s|² = J + m |s - c|²`` for any site ``s``.
"""
from __future__ import annotations

import numpy as np

from .types import ClippedCVT


def cvt_energy(cvt: ClippedCVT, sites=None) -> float:
    X = cvt.sites if sites is None else np.asarray(sites, dtype=float).reshape(-1, 3)
    m = cvt.volumes
    d = X - cvt.centroids
    return float(np.sum(cvt.inertia_traces) + np.sum(m * np.einsum("ij,ij->i", d, d)))


def cvt_energy_gradient(cvt: ClippedCVT, sites=None) -> np.ndarray:
    """``2 m_i (x_i - c_i)`` per site, the gradient with the partition held fixed."""
    X = cvt.sites if sites is None else np.asarray(sites, dtype=float).reshape(-1, 3)
    return 2.0 * cvt.volumes[:, None] * (X - cvt.centroids)


class FixedPartitionEnergy:
    """Energy of moving sites over a frozen set of clipped cells."""

    def __init__(self, cvt: ClippedCVT):
        self.m = cvt.volumes
        self.c = cvt.centroids
        self.J = float(np.sum(cvt.inertia_traces))
        self.shape = cvt.sites.shape

    def __call__(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        X = x.reshape(self.shape)
        d = X - self.c
        f = self.J + float(np.sum(self.m * np.einsum("ij,ij->i", d, d)))
        g = 2.0 * self.m[:, None] * d
        return f, g.ravel()
