"""Limited-memory BFGS with a strong-Wolfe line search."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import line_search


@dataclass
class LBFGSResult:
    x: np.ndarray
    f: float
    g: np.ndarray
    n_iter: int
    n_eval: int
    message: str


def _two_loop(g: np.ndarray, S, Y, gamma: float) -> np.ndarray:
    q = g.copy()
    alphas = []
    for s, y in reversed(list(zip(S, Y))):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a, s, y))
    r = gamma * q
    for rho, a, s, y in reversed(alphas):
        b = rho * (y @ r)
        r += (a - b) * s
    return r


def lbfgs(fun: Callable[[np.ndarray], tuple[float, np.ndarray]], x0: np.ndarray, *,
          memory: int = 7, max_iter: int = 5, gtol: float = 1e-12, gamma0: float = 1.0,
          project: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
          c1: float = 1e-4, c2: float = 0.9) -> LBFGSResult:
    """Minimise ``fun`` (returning value and gradient) from ``x0``.

    ``project(x_old, x_new)`` may pull an accepted step back into a feasible
    region; a projected step is kept only if it still lowers the objective.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    n_eval = 1
    S: deque = deque(maxlen=memory)
    Y: deque = deque(maxlen=memory)
    gamma = gamma0
    message = "max_iter"
    it = 0
    cache: dict = {}

    def f_only(z):
        nonlocal n_eval
        n_eval += 1
        val, grad = fun(z)
        cache["last"] = (z.copy(), val, grad)
        return val

    def g_only(z):
        last = cache.get("last")
        if last is not None and np.array_equal(last[0], z):
            return last[2]
        nonlocal n_eval
        n_eval += 1
        return fun(z)[1]

    for it in range(1, max_iter + 1):
        if np.linalg.norm(g) <= gtol:
            message = "gtol"
            it -= 1
            break
        d = -_two_loop(g, S, Y, gamma)
        if g @ d >= 0.0:
            S.clear()
            Y.clear()
            d = -gamma * g
        alpha, *_ = line_search(f_only, g_only, x, d, gfk=g, old_fval=f, c1=c1, c2=c2, maxiter=20)
        if alpha is None:
            # Armijo backtracking fallback
            alpha = 1.0
            while alpha > 1e-12:
                if f_only(x + alpha * d) <= f + c1 * alpha * (g @ d):
                    break
                alpha *= 0.5
            else:
                message = "line search failed"
                break
        x_new = x + alpha * d
        if project is not None:
            x_new = project(x, x_new)
        f_new, g_new = fun(x_new)
        n_eval += 1
        if f_new > f:
            message = "projection rejected"
            break
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            S.append(s)
            Y.append(y)
            gamma = sy / (y @ y)
        x, f, g = x_new, f_new, g_new
    return LBFGSResult(x, float(f), g, it, n_eval, message)
