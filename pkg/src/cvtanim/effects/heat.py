"""Heat diffusion over the centroid adjacency graph and the resulting schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import brentq
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from .schedule import NEVER, EffectSchedule

EIG_LIMIT = 5000
HORIZON_DECAY = 50.0


def graph_laplacian(adjacency, n: int | None = None) -> np.ndarray:
    """Combinatorial Laplacian ``D - A`` from an edge list or a square matrix."""
    A = np.asarray(adjacency)
    if A.ndim == 2 and A.shape[0] == A.shape[1] and (n is None or n == A.shape[0]) and A.shape[1] != 2:
        W = (A != 0).astype(float)
        if not np.array_equal(W, W.T):
            raise ValueError("adjacency matrix must be symmetric")
        np.fill_diagonal(W, 0.0)
    else:
        edges = np.asarray(adjacency, dtype=np.int64).reshape(-1, 2)
        if n is None:
            n = int(edges.max()) + 1 if len(edges) else 0
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise ValueError("edge index out of range")
        W = np.zeros((n, n))
        W[edges[:, 0], edges[:, 1]] = 1.0
        W[edges[:, 1], edges[:, 0]] = 1.0
        np.fill_diagonal(W, 0.0)
    return np.diag(W.sum(1)) - W


@dataclass(eq=False)
class HeatState:
    """Initial temperatures ``F0`` on the graph with Laplacian ``L``."""

    F0: np.ndarray
    L: np.ndarray
    _eig: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        self.F0 = np.asarray(self.F0, dtype=float).reshape(-1)
        self.L = np.asarray(self.L, dtype=float)
        n = len(self.F0)
        if self.L.shape != (n, n):
            raise ValueError("Laplacian shape does not match the temperature vector")
        if not np.all(np.isfinite(self.F0)):
            raise ValueError("temperatures must be finite")
        if not np.allclose(self.L, self.L.T) or np.max(np.abs(self.L.sum(1)), initial=0.0) > 1e-9:
            raise ValueError("Laplacian must be symmetric with zero row sums")

    @property
    def n(self) -> int:
        return len(self.F0)

    def spectrum(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Eigenvalues (clamped at 0), eigenvectors and the spectral coefficients of ``F0``."""
        if self._eig is None:
            lam, V = np.linalg.eigh(self.L)
            lam = np.maximum(lam, 0.0)
            self._eig = (lam, V, V.T @ self.F0)
        return self._eig

    def components(self) -> np.ndarray:
        _, labels = connected_components(sparse.csr_matrix(self.L != 0), directed=False)
        return labels

    def limit(self) -> np.ndarray:
        """Per-cell value as ``t`` grows: the mean of ``F0`` over the cell's component."""
        lab = self.components()
        sums = np.bincount(lab, weights=self.F0)
        counts = np.bincount(lab)
        return (sums / counts)[lab]


def heat_state(adjacency, n: int, F0) -> HeatState:
    return HeatState(np.asarray(F0, dtype=float), graph_laplacian(adjacency, n))


def _implicit_euler(state: HeatState, t: float, steps: int) -> np.ndarray:
    h = t / steps
    lu = splu(sparse.csc_matrix(np.eye(state.n) + h * state.L))
    F = state.F0.copy()
    for _ in range(steps):
        F = lu.solve(F)
    return F


def heat_evolve(state: HeatState, t, method: str = "auto", steps: int | None = None) -> np.ndarray:
    """Temperatures ``exp(-t L) F0``.

    ``t`` may be a scalar or a 1-D array (one column per time).  The
    spectral method is used up to ``EIG_LIMIT`` cells; beyond that, or with
    ``method="implicit"``, implicit Euler on the graph with ``steps`` steps.
    """
    ts = np.asarray(t, dtype=float)
    if np.any(ts < 0.0):
        raise ValueError("t must be >= 0")
    if method == "auto":
        method = "spectral" if state.n <= EIG_LIMIT else "implicit"
    if method == "spectral":
        lam, V, c = state.spectrum()
        E = np.exp(-np.multiply.outer(lam, ts.reshape(-1)))
        out = V @ (E * c[:, None])
        out[:, ts.reshape(-1) == 0.0] = state.F0[:, None]
        return out[:, 0] if ts.ndim == 0 else out
    if method == "implicit":
        def one(tt):
            if tt == 0.0:
                return state.F0.copy()
            k = steps if steps is not None else max(int(np.ceil(tt / 1e-3)), 1)
            return _implicit_euler(state, float(tt), k)
        if ts.ndim == 0:
            return one(float(ts))
        return np.stack([one(float(x)) for x in ts], axis=1)
    raise ValueError(f"unknown method {method!r}")


def _horizon(state: HeatState) -> float:
    lam, _, _ = state.spectrum()
    pos = lam[lam > 1e-10 * max(lam.max(initial=0.0), 1.0)]
    return HORIZON_DECAY / float(pos.min()) if len(pos) else 0.0


def heat_deactivation_schedule(state: HeatState, tau: float, excluded=(), time_scale: float = 1.0,
                               dt_heat: float | None = None, samples: int = 4096,
                               chunk: int = 256) -> EffectSchedule:
    """First time each cell's temperature exceeds ``tau``.

    Temperatures are sampled every ``dt_heat`` up to the horizon where every
    component has settled to ``exp(-50)`` of its limit, and each first
    crossing is refined with Brent's method.  Cells in the components of the
    ``excluded`` cells never deactivate.  Times are multiplied by
    ``time_scale`` to give simulation seconds.
    """
    if not 0.0 < tau < float(np.max(state.F0, initial=0.0)):
        raise ValueError("tau must lie in (0, max F0)")
    if time_scale <= 0.0:
        raise ValueError("time_scale must be positive")
    n = state.n
    times = np.full(n, NEVER)
    comp = state.components()
    blocked = np.isin(comp, comp[np.asarray(list(excluded), dtype=np.int64)]) if len(excluded) else np.zeros(n, bool)
    hot = (state.F0 > tau) & ~blocked
    times[hot] = 0.0
    todo = ~hot & ~blocked
    if n > EIG_LIMIT:
        raise ValueError(f"schedule refinement needs the spectral method (n <= {EIG_LIMIT})")
    T = _horizon(state)
    if T > 0.0 and np.any(todo):
        lam, V, c = state.spectrum()
        h = dt_heat if dt_heat is not None else T / samples
        grid = np.arange(0.0, T + h, h)
        for s in range(1, len(grid), chunk):
            tt = grid[s:s + chunk]
            block = heat_evolve(state, tt, "spectral")
            for j in range(len(tt)):
                F = block[:, j]
                new = np.nonzero(todo & (F > tau))[0]
                t1 = tt[j]
                t0 = grid[s + j - 1]
                for i in new:
                    f = lambda x, i=i: float(V[i] @ (np.exp(-lam * x) * c)) - tau
                    times[i] = brentq(f, t0, t1, xtol=1e-13, rtol=1e-14) if f(t0) <= 0.0 else t0
                todo[new] = False
            if not np.any(todo):
                break
    times[np.isfinite(times)] *= time_scale
    return EffectSchedule(times, "heat")


__all__ = ["EIG_LIMIT", "HeatState", "graph_laplacian", "heat_deactivation_schedule", "heat_evolve", "heat_state"]
