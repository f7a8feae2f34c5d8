"""Geometric control on the Bloch sphere/ball: vector fields, brackets, singular arcs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import PureState, SystemSpec, as_bloch
from .propagate import feedback_matrices, lie_bracket, uses_tangent_feedback

POLE_GUARD = 1e-6
SIN_GUARD = 1e-9
CONDITION_LIMIT = 1e8

__all__ = [
    "SphereCoord",
    "SingularEvaluation",
    "SingularControlUndefined",
    "pauli_field",
    "singular_arc_alpha",
    "singular_control_closed",
    "lie_bracket",
    "singular_control_open",
    "singular_feedback_raw",
    "quantum_speed_limit",
    "singular_arc_points",
    "sphere_from_bloch",
    "bloch_from_sphere",
]


class SingularControlUndefined(ValueError):
    """The bracket expansion cannot produce a singular control at this point."""

    def __init__(self, msg: str, basis_condition: float = float("nan")):
        super().__init__(msg)
        self.basis_condition = basis_condition


@dataclass(frozen=True)
class SphereCoord:
    theta: float
    phi: float

    def check(self) -> "SphereCoord":
        if not POLE_GUARD < self.theta < np.pi - POLE_GUARD:
            raise ValueError(f"theta={self.theta!r} too close to a pole")
        return self


@dataclass(frozen=True)
class SingularEvaluation:
    u_raw: float
    u_applied: float
    admissible: bool
    basis_condition: float


def sphere_from_bloch(r) -> SphereCoord:
    r = np.asarray(r, dtype=float)
    n = np.linalg.norm(r)
    theta = float(np.arccos(np.clip(r[2] / n, -1.0, 1.0)))
    phi = float(np.mod(np.arctan2(r[1], r[0]), 2 * np.pi))
    return SphereCoord(theta, phi)


def bloch_from_sphere(p: SphereCoord, radius: float = 1.0) -> np.ndarray:
    st = np.sin(p.theta)
    return radius * np.array([st * np.cos(p.phi), st * np.sin(p.phi), np.cos(p.theta)])


def pauli_field(axis: str, p: SphereCoord) -> np.ndarray:
    """Tangent vector ``(dtheta/dt, dphi/dt)`` generated by ``sigma_axis``."""
    p.check()
    th, ph = p.theta, p.phi
    cot = np.cos(th) / np.sin(th)
    if axis == "z":
        return np.array([0.0, 2.0])
    if axis == "x":
        return np.array([-2.0 * np.sin(ph), -2.0 * np.cos(ph) * cot])
    if axis == "y":
        return np.array([2.0 * np.cos(ph), -2.0 * np.sin(ph) * cot])
    raise ValueError(f"axis must be x, y or z, got {axis!r}")


def singular_arc_alpha(p: SphereCoord, xi: float) -> float:
    """Coefficient of ``f`` in ``[f, g] = alpha f + beta g`` (closed system).

    Vanishes exactly on the singular arc ``xi = tan(theta) cos(phi)``.
    """
    s = np.sin(p.phi)
    if abs(s) <= SIN_GUARD:
        raise ValueError("alpha is singular for sin(phi) = 0")
    return float(-(2.0 / s) * (np.cos(p.phi) - xi / np.tan(p.theta)))


def singular_control_closed(xi: float) -> float:
    return -xi / (1.0 + xi * xi)


def singular_arc_points(xi: float, thetas) -> np.ndarray:
    """Points ``(theta, phi)`` on the arc ``xi = tan(theta) cos(phi)``.

    Both branches ``phi`` and ``2 pi - phi`` are returned; thetas for which
    ``|xi / tan(theta)| > 1`` have no arc point and are skipped.
    """
    out = []
    for th in np.asarray(thetas, dtype=float):
        if not POLE_GUARD < th < np.pi - POLE_GUARD or abs(np.cos(th)) < 1e-15 and xi != 0:
            continue
        c = xi / np.tan(th)
        if abs(c) > 1.0:
            continue
        ph = float(np.arccos(c))
        out.append((th, ph))
        out.append((th, 2 * np.pi - ph))
    out.sort(key=lambda p: (p[1] > np.pi, p[0] if p[1] <= np.pi else -p[0]))
    return np.array(out).reshape(-1, 2)


def _condition(M: np.ndarray) -> float:
    s = np.linalg.svd(M, compute_uv=False)
    return float(s[0] / s[-1]) if s[-1] > 0 else float("inf")


def singular_control_open(rho, spec: SystemSpec) -> SingularEvaluation:
    """Singular control at ``rho`` from the double-bracket expansion.

    With damping on a single axis the brackets ``[f,[f,g]]`` and
    ``[g,[f,g]]`` are expanded on ``{f, g, [f,g]}`` and ``u = -alpha1/beta1``.
    Without damping, or with uniform damping, all fields are tangent to
    the sphere, so the expansion uses ``{f, g}`` in the tangent plane
    (the reported condition number is that of the 3x2 basis).
    """
    r = as_bloch(rho)
    F, B, C, V, W = feedback_matrices(spec)
    f, g, c, v, w = F @ r, B @ r, C @ r, V @ r, W @ r
    basis = np.column_stack([f, g]) if uses_tangent_feedback(spec) else np.column_stack([f, g, c])
    cond = _condition(basis) if np.any(basis) else float("inf")
    if not cond < CONDITION_LIMIT:
        raise SingularControlUndefined(
            f"bracket basis is degenerate (basis_condition={cond:.3g})", cond)
    a = np.linalg.lstsq(basis, v, rcond=None)[0]
    b = np.linalg.lstsq(basis, w, rcond=None)[0]
    if abs(b[0]) <= 1e-12 * max(1.0, np.linalg.norm(b)):
        raise SingularControlUndefined("beta1 vanishes; singular control undefined", cond)
    u = float(-a[0] / b[0])
    ub = spec.u_bound
    return SingularEvaluation(u, min(max(u, -ub), ub), abs(u) <= ub, cond)


def singular_feedback_raw(rho, spec: SystemSpec) -> float:
    """Same control as :func:`singular_control_open` through the compiled path."""
    u, ok = _kernels.singular_feedback(np.asarray(rho, dtype=float),
                                       np.stack(feedback_matrices(spec)),
                                       _kernels.FEEDBACK_TANGENT if uses_tangent_feedback(spec)
                                       else _kernels.FEEDBACK_DAMPED)
    if not ok:
        raise SingularControlUndefined("feedback denominator vanishes")
    return float(u)


def quantum_speed_limit(psi_i: PureState, psi_t: PureState) -> float:
    """Minimum time ``arccos(|i0 t0| + |i1 t1|)`` for xi = 0 and unbounded control."""
    for psi in (psi_i, psi_t):
        if abs(psi.norm - 1.0) > 1e-12:
            raise ValueError("states must be normalized")
    s = abs(psi_i.c0 * psi_t.c0) + abs(psi_i.c1 * psi_t.c1)
    return float(np.arccos(min(1.0, s)))
