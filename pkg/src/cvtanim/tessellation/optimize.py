from __future__ import annotations

import logging
import warnings

import numpy as np
from scipy.optimize._linesearch import LineSearchWarning

from ..volumes import ImplicitVolume
from .clipping import bisect_surface, clip_diagram
from .energy import FixedPartitionEnergy, cvt_energy
from .lbfgs import lbfgs
from .types import ClippedCVT, CVTConfig, SiteSet
from .voronoi import default_bound_radius, init_sites, voronoi

log = logging.getLogger(__name__)


def project_sites(volume: ImplicitVolume, old: np.ndarray, new: np.ndarray) -> np.ndarray:
    """Pull sites that left the volume back along their step to the last inside point."""
    out = new.copy()
    bad = ~volume.inside(new)
    if np.any(bad):
        tol = 1e-10 * 2.0 * volume.radius
        out[bad] = bisect_surface(volume, old[bad], new[bad], tol)
    return out


def clipped_tessellation(sites: np.ndarray, volume: ImplicitVolume, resolution: int,
                         bound_radius: float | None = None) -> ClippedCVT:
    R = default_bound_radius(volume) if bound_radius is None else bound_radius
    diagram = voronoi(sites, R, center=volume.center)
    return clip_diagram(diagram, volume, resolution)


def optimize_cvt(volume: ImplicitVolume, config: CVTConfig, initial_sites=None,
                 bound_radius: float | None = None) -> ClippedCVT:
    """Clip-and-optimise loop.

    ``config.iterations`` outer rounds of (Voronoi, clip, L-BFGS on the
    frozen partition).  ``energy_history[k]`` is the energy of the clipped
    tessellation after ``k`` rounds; the returned CVT is the last one.
    """
    if initial_sites is None:
        X = init_sites(volume, config.n_sites, config.seed).sites
    else:
        X = initial_sites.sites if isinstance(initial_sites, SiteSet) else np.asarray(initial_sites, dtype=float)
        X = X.reshape(-1, 3).copy()
    history: list[float] = []
    cvt = None
    for it in range(config.iterations + 1):
        cvt = clipped_tessellation(X, volume, config.clip_resolution, bound_radius)
        E = cvt_energy(cvt)
        history.append(E)
        log.debug("cvt iteration %d energy %.12g", it, E)
        if it == config.iterations:
            break
        objective = FixedPartitionEnergy(cvt)
        shape = X.shape

        def project(x_old, x_new, shape=shape):
            return project_sites(volume, x_old.reshape(shape), x_new.reshape(shape)).ravel()

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LineSearchWarning)
            res = lbfgs(objective, X.ravel(), memory=config.lbfgs_memory, max_iter=config.lbfgs_steps,
                        gamma0=1.0 / (2.0 * float(np.mean(objective.m))), project=project)
        X = res.x.reshape(shape)
    cvt.energy_history = history
    return cvt
