"""Compiled inner loops: fixed-step RK4 for the Bloch vector and its costate.

A schedule reaches this level as three flat arrays, one entry per segment:
``kinds`` (0 = constant control, 1 = singular state feedback), ``uvals``
(the constant control, ignored for singular segments) and ``durations``.
"""
import math

import numpy as np
from numba import njit

KIND_CONST = 0
KIND_SINGULAR = 1

FEEDBACK_DAMPED = 0
FEEDBACK_TANGENT = 1

STATUS_OK = 0
STATUS_SINGULAR_FAIL = 1

# relative size of the feedback denominator below which u_sing is undefined
DENOM_RTOL = 1e-12


@njit(cache=True)
def _mv(M, x):
    return (M[0, 0] * x[0] + M[0, 1] * x[1] + M[0, 2] * x[2],
            M[1, 0] * x[0] + M[1, 1] * x[1] + M[1, 2] * x[2],
            M[2, 0] * x[0] + M[2, 1] * x[1] + M[2, 2] * x[2])


@njit(cache=True)
def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


@njit(cache=True)
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True)
def singular_feedback(r, FB, mode):
    """Raw singular control at ``r``; returns ``(u_raw, ok)``.

    ``FB`` stacks the matrices of ``f, g, [f,g], [f,[f,g]], [g,[f,g]]``.
    In damped mode the expansion runs on ``{f, g, [f,g]}``; Cramer's rule
    gives ``alpha1 / beta1 = det(v,g,c) / det(w,g,c)``.  Without damping
    every field is tangent to the sphere and the expansion runs on
    ``{f, g}`` inside the tangent plane.  Uniform damping only rescales
    the radius, so it takes the tangent route with the undamped drift.
    """
    g = _mv(FB[1], r)
    v = _mv(FB[3], r)
    w = _mv(FB[4], r)
    if mode == FEEDBACK_DAMPED:
        gc = _cross(g, _mv(FB[2], r))
        num = _dot(v, gc)
        den = _dot(w, gc)
        scale = math.sqrt(_dot(w, w) * _dot(gc, gc))
    else:
        fg = _cross(_mv(FB[0], r), g)
        num = _dot(_cross(v, g), fg)
        wg = _cross(w, g)
        den = _dot(wg, fg)
        scale = math.sqrt(_dot(wg, wg) * _dot(fg, fg))
    if scale == 0.0 or not (abs(den) > DENOM_RTOL * scale):
        return 0.0, False
    return -num / den, True


@njit(cache=True)
def _rhs(r, u, A, B, out):
    for i in range(3):
        out[i] = (A[i, 0] + u * B[i, 0]) * r[0] + (A[i, 1] + u * B[i, 1]) * r[1] \
            + (A[i, 2] + u * B[i, 2]) * r[2]


@njit(cache=True)
def count_steps(durations, dt_max):
    n = 0
    for d in durations:
        if d > 0.0:
            n += max(1, int(math.ceil(d / dt_max - 1e-9)))
    return n


@njit(cache=True)
def integrate_state(r0, kinds, uvals, durations, A, B, FB, mode, ubound, dt_max):
    """Forward RK4 across all segments.

    ``A``/``B`` drive the integration; ``FB`` is the matrix stack handed
    to :func:`singular_feedback`.

    Returns ``(times, states, u_grid, seg_index, stage_u, status, t_fail, excess)``
    where ``excess`` integrates ``max(|u_raw| - ubound, 0)`` over singular
    segments (zero for an admissible singular arc).
    ``stage_u[n]`` holds the controls used by step ``n`` at its start,
    midpoint (mean of the two midpoint stages) and end, which the costate
    pass replays.  ``seg_index[k]`` is the segment grid point ``k`` starts.
    """
    nsteps = count_steps(durations, dt_max)
    times = np.empty(nsteps + 1)
    states = np.empty((nsteps + 1, 3))
    u_grid = np.empty(nsteps + 1)
    seg_index = np.empty(nsteps + 1, dtype=np.int64)
    stage_u = np.empty((nsteps, 3))
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    r = r0.copy()
    t = 0.0
    times[0] = 0.0
    states[0] = r
    u_grid[0] = 0.0
    seg_index[0] = 0
    n = 0
    last_seg = 0
    excess = 0.0
    for s in range(kinds.shape[0]):
        d = durations[s]
        if d <= 0.0:
            continue
        last_seg = s
        m = max(1, int(math.ceil(d / dt_max - 1e-9)))
        h = d / m
        kind = kinds[s]
        uval = uvals[s]
        singular = kind == KIND_SINGULAR
        t_start = t
        for j in range(m):
            u1, ok1, e1 = uval, True, 0.0
            if singular:
                u1, ok1 = singular_feedback(r, FB, mode)
                e1 = abs(u1) - ubound
                u1 = min(max(u1, -ubound), ubound)
            _rhs(r, u1, A, B, k1)
            for i in range(3):
                tmp[i] = r[i] + 0.5 * h * k1[i]
            u2, ok2, e2 = uval, True, 0.0
            if singular:
                u2, ok2 = singular_feedback(tmp, FB, mode)
                e2 = abs(u2) - ubound
                u2 = min(max(u2, -ubound), ubound)
            _rhs(tmp, u2, A, B, k2)
            for i in range(3):
                tmp[i] = r[i] + 0.5 * h * k2[i]
            u3, ok3, e3 = uval, True, 0.0
            if singular:
                u3, ok3 = singular_feedback(tmp, FB, mode)
                e3 = abs(u3) - ubound
                u3 = min(max(u3, -ubound), ubound)
            _rhs(tmp, u3, A, B, k3)
            for i in range(3):
                tmp[i] = r[i] + h * k3[i]
            u4, ok4, e4 = uval, True, 0.0
            if singular:
                u4, ok4 = singular_feedback(tmp, FB, mode)
                e4 = abs(u4) - ubound
                u4 = min(max(u4, -ubound), ubound)
            _rhs(tmp, u4, A, B, k4)
            if not (ok1 and ok2 and ok3 and ok4):
                return (times[: n + 1], states[: n + 1], u_grid[: n + 1],
                        seg_index[: n + 1], stage_u[:n], STATUS_SINGULAR_FAIL, t, excess)
            for i in range(3):
                r[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if singular:
                excess += h / 6.0 * (max(e1, 0.0) + 2.0 * max(e2, 0.0)
                                     + 2.0 * max(e3, 0.0) + max(e4, 0.0))
            u_grid[n] = u1
            seg_index[n] = s
            stage_u[n, 0] = u1
            stage_u[n, 1] = 0.5 * (u2 + u3)
            stage_u[n, 2] = u4
            n += 1
            t = t_start + (j + 1) * h if j < m - 1 else t_start + d
            times[n] = t
            states[n] = r
    if n > 0:
        u_grid[n] = stage_u[n - 1, 2]
        seg_index[n] = last_seg
    return times, states, u_grid, seg_index, stage_u, STATUS_OK, t, excess


@njit(cache=True)
def integrate_costate(lam_tf, times, stage_u, A, B):
    """Backward RK4 for ``dlam/dt = -(A + u B)^T lam`` on the forward grid."""
    nsteps = stage_u.shape[0]
    lams = np.empty((nsteps + 1, 3))
    lam = lam_tf.copy()
    lams[nsteps] = lam
    k1 = np.empty(3)
    k2 = np.empty(3)
    k3 = np.empty(3)
    k4 = np.empty(3)
    tmp = np.empty(3)
    for n in range(nsteps - 1, -1, -1):
        h = times[n + 1] - times[n]
        # integrate in reversed time s = t_{n+1} - t: dlam/ds = (A + u B)^T lam
        _rhs_t(lam, stage_u[n, 2], A, B, k1)
        for i in range(3):
            tmp[i] = lam[i] + 0.5 * h * k1[i]
        _rhs_t(tmp, stage_u[n, 1], A, B, k2)
        for i in range(3):
            tmp[i] = lam[i] + 0.5 * h * k2[i]
        _rhs_t(tmp, stage_u[n, 1], A, B, k3)
        for i in range(3):
            tmp[i] = lam[i] + h * k3[i]
        _rhs_t(tmp, stage_u[n, 0], A, B, k4)
        for i in range(3):
            lam[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
        lams[n] = lam
    return lams


@njit(cache=True)
def _rhs_t(x, u, A, B, out):
    for i in range(3):
        out[i] = (A[0, i] + u * B[0, i]) * x[0] + (A[1, i] + u * B[1, i]) * x[1] \
            + (A[2, i] + u * B[2, i]) * x[2]
