"""Nelder-Mead simplex minimization (reflection 1, expansion 2, contraction 0.5, shrink 0.5)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

REFLECT = 1.0
EXPAND = 2.0
CONTRACT = 0.5
SHRINK = 0.5


@dataclass
class SimplexResult:
    x: np.ndarray
    fun: float
    evaluations: int
    converged: bool


def initial_simplex(x0, step) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    step = np.broadcast_to(np.asarray(step, dtype=float), x0.shape)
    simplex = np.tile(x0, (x0.size + 1, 1))
    for i in range(x0.size):
        simplex[i + 1, i] += step[i] if step[i] != 0 else 1e-3
    return simplex


def minimize(fun, x0, step=0.1, xtol: float = 1e-8, ftol: float = 1e-12,
             max_evals: int = 2000, simplex=None) -> SimplexResult:
    """Minimize ``fun`` starting from ``x0``.

    Stops when both the spread of function values over the simplex is
    below ``ftol`` and every vertex lies within ``xtol`` (max-norm) of the
    best one, or after ``max_evals`` evaluations.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    if n == 0:
        return SimplexResult(x0, float(fun(x0)), 1, True)
    pts = initial_simplex(x0, step) if simplex is None else np.array(simplex, dtype=float)
    vals = np.array([fun(p) for p in pts])
    nfev = n + 1
    converged = False
    while nfev < max_evals:
        order = np.argsort(vals, kind="stable")
        pts, vals = pts[order], vals[order]
        if (vals[-1] - vals[0] <= ftol and np.max(np.abs(pts[1:] - pts[0])) <= xtol):
            converged = True
            break
        centroid = pts[:-1].mean(axis=0)
        worst = pts[-1]
        xr = centroid + REFLECT * (centroid - worst)
        fr = fun(xr)
        nfev += 1
        if fr < vals[0]:
            xe = centroid + EXPAND * (xr - centroid)
            fe = fun(xe)
            nfev += 1
            if fe < fr:
                pts[-1], vals[-1] = xe, fe
            else:
                pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-2]:
            pts[-1], vals[-1] = xr, fr
            continue
        if fr < vals[-1]:
            xc = centroid + CONTRACT * (xr - centroid)
        else:
            xc = centroid + CONTRACT * (worst - centroid)
        fc = fun(xc)
        nfev += 1
        if fc < min(fr, vals[-1]):
            pts[-1], vals[-1] = xc, fc
            continue
        for i in range(1, n + 1):
            pts[i] = pts[0] + SHRINK * (pts[i] - pts[0])
            vals[i] = fun(pts[i])
        nfev += n
    best = int(np.argmin(vals))
    return SimplexResult(pts[best].copy(), float(vals[best]), nfev, converged)
