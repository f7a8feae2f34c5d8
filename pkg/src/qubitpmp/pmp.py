"""Switching function, c-Hamiltonian and checks of the PMP necessary conditions."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import SystemSpec, drift_field, drive_field, hamiltonian_matrix
from .propagate import (
    CostateTrajectory,
    Sampled,
    Segmented,
    Trajectory,
    evolve_costate,
    evolve_state,
    lie_bracket,
    terminal_cost_gradient,
)

DEFAULT_TOL = 1e-3
NEIGHBORHOOD_STEPS = 2
NEAR_ZERO_FACTOR = 10.0


def switching_function(lam, rho, spec: SystemSpec) -> float:
    """``Phi = 2 lam . (h1 x rho)``."""
    return float(np.dot(lam, drive_field(spec) @ np.asarray(rho, dtype=float)))


def control_hamiltonian(lam, rho, u: float, spec: SystemSpec) -> float:
    """``H_c = lam . (2 h x rho - Gamma P rho)``."""
    r = np.asarray(rho, dtype=float)
    return float(np.dot(lam, (drift_field(spec) + u * drive_field(spec)) @ r))


def switching_function_wf(pi, psi, spec: SystemSpec) -> float:
    """``Im <Pi| H_d |Psi>`` for wave-function costates."""
    Hd = hamiltonian_matrix(1.0, spec) - hamiltonian_matrix(0.0, spec)
    return float(np.imag(np.vdot(np.asarray(pi), Hd @ np.asarray(psi))))


def control_hamiltonian_wf(pi, psi, u: float, spec: SystemSpec) -> float:
    """``Im <Pi| H(u) |Psi>``."""
    return float(np.imag(np.vdot(np.asarray(pi), hamiltonian_matrix(u, spec) @ np.asarray(psi))))


def switching_samples(traj: Trajectory, costates: CostateTrajectory, spec: SystemSpec) -> np.ndarray:
    B = drive_field(spec)
    return np.einsum("ni,ni->n", costates.costates, traj.states @ B.T)


def hamiltonian_samples(traj: Trajectory, costates: CostateTrajectory, spec: SystemSpec) -> np.ndarray:
    A = drift_field(spec)
    B = drive_field(spec)
    lam = costates.costates
    return np.einsum("ni,ni->n", lam, traj.states @ A.T) \
        + traj.controls * np.einsum("ni,ni->n", lam, traj.states @ B.T)


def cell_switching(traj: Trajectory, costates: CostateTrajectory, sched: Sampled,
                   spec: SystemSpec) -> np.ndarray:
    """Mean of ``Phi`` over each control cell of a sampled schedule.

    ``cell_switching(...)[k] * sched.dt`` is the derivative of the terminal
    cost with respect to ``u_k``.
    """
    phi = switching_samples(traj, costates, spec)
    # dPhi/dt = lam . [f, g] rho for any control, which allows the
    # fourth-order end-corrected trapezoid rule
    C = lie_bracket(drift_field(spec), drive_field(spec))
    dphi = np.einsum("ni,ni->n", costates.costates, traj.states @ C.T)
    t = traj.times
    h = np.diff(t)
    seg = traj.segment_index[:-1]
    pieces = 0.5 * (phi[:-1] + phi[1:]) * h + h**2 / 12.0 * (dphi[:-1] - dphi[1:])
    integral = np.bincount(seg, weights=pieces, minlength=sched.n)
    return integral / sched.dt


def adjoint_gradient(rho0, target, sched: Sampled, spec: SystemSpec, cost_kind: str = "overlap",
                     dt_max: float | None = None) -> tuple[np.ndarray, float]:
    """``(dC/du_k, C)`` for a sampled control via one forward and one backward pass."""
    from .propagate import terminal_cost

    traj = evolve_state(rho0, sched, spec, dt_max)
    lam = evolve_costate(terminal_cost_gradient(traj.final, target, cost_kind), traj, spec)
    return cell_switching(traj, lam, sched, spec) * sched.dt, terminal_cost(traj.final, target, cost_kind)


@dataclass
class OptimalityReport:
    times: np.ndarray = field(repr=False)
    hc_samples: np.ndarray = field(repr=False)
    phi_samples: np.ndarray = field(repr=False)
    hc_mean: float
    hc_drift: float
    bang_violations: int
    bang_worst_margin: float
    singular_residual: float
    hc_sign: str
    tol_hc: float
    tol_phi: float

    @property
    def passed(self) -> bool:
        return (self.hc_drift <= self.tol_hc and self.bang_violations == 0
                and self.singular_residual <= self.tol_phi)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} hc_mean={self.hc_mean:.6g} hc_drift={self.hc_drift:.3g} "
                f"hc_sign={self.hc_sign} bang_violations={self.bang_violations} "
                f"worst_bang_margin={self.bang_worst_margin:.3g} "
                f"singular_residual={self.singular_residual:.3g}")

    def to_dict(self, samples: bool = True) -> dict:
        d = {
            "hc_mean": self.hc_mean,
            "hc_drift": self.hc_drift,
            "bang_violations": self.bang_violations,
            "bang_worst_margin": self.bang_worst_margin,
            "singular_residual": self.singular_residual,
            "hc_sign": self.hc_sign,
            "tol_hc": self.tol_hc,
            "tol_phi": self.tol_phi,
            "passed": self.passed,
        }
        if samples:
            d["times"] = self.times.tolist()
            d["hc_samples"] = self.hc_samples.tolist()
            d["phi_samples"] = self.phi_samples.tolist()
        return d


def _point_kinds(traj: Trajectory, sched, spec: SystemSpec) -> np.ndarray:
    """Per grid point: +1/-1 for a bang at that sign, 0 for singular/interior."""
    if isinstance(sched, Segmented):
        letters = np.array([{"X": -1, "Y": 1, "S": 0}[s.kind] for s in sched.segments])
        return letters[traj.segment_index]
    u = traj.controls
    at_bound = np.abs(u) >= spec.u_bound * (1 - 1e-12)
    return np.where(at_bound, np.sign(u), 0).astype(int)


def _switch_mask(traj: Trajectory, kinds: np.ndarray, radius: int) -> np.ndarray:
    """Grid points within ``radius`` steps of a change of control regime."""
    seg = traj.segment_index
    n = len(seg)
    change = np.flatnonzero((seg[1:] != seg[:-1]) & (kinds[1:] != kinds[:-1])) + 1
    mask = np.zeros(n, dtype=bool)
    for i in change:
        mask[max(0, i - radius):min(n, i + radius + 1)] = True
    return mask


def verify(traj: Trajectory, costates: CostateTrajectory, sched, spec: SystemSpec,
           tol_hc: float = DEFAULT_TOL, tol_phi: float = DEFAULT_TOL) -> OptimalityReport:
    """Quantify how well a protocol satisfies the PMP necessary conditions.

    A bang point violates the sign rule when ``sign(u) * Phi > tol_phi``
    (``u = +1`` needs ``Phi < 0``); points within two grid steps of a
    regime change are skipped.
    """
    if not np.array_equal(traj.times, costates.times):
        raise ValueError("state and costate grids differ")
    phi = switching_samples(traj, costates, spec)
    hc = hamiltonian_samples(traj, costates, spec)
    hc_mean = float(np.mean(hc))
    hc_drift = float(np.max(np.abs(hc - hc_mean)))

    kinds = _point_kinds(traj, sched, spec)
    near = _switch_mask(traj, kinds, NEIGHBORHOOD_STEPS)
    bang = (kinds != 0) & ~near
    margins = kinds[bang] * phi[bang]
    violations = int(np.count_nonzero(margins > tol_phi))
    worst = float(np.max(margins)) if margins.size else 0.0
    sing = kinds == 0
    singular_residual = float(np.max(np.abs(phi[sing]))) if np.any(sing) else 0.0

    if abs(hc_mean) < NEAR_ZERO_FACTOR * tol_hc:
        sign = "near_zero"
    else:
        sign = "positive" if hc_mean > 0 else "negative"
    return OptimalityReport(traj.times, hc, phi, hc_mean, hc_drift, violations, worst,
                            singular_residual, sign, tol_hc, tol_phi)


def verify_protocol(rho0, target, sched, spec: SystemSpec, cost_kind: str = "overlap",
                    tol_hc: float = DEFAULT_TOL, tol_phi: float = DEFAULT_TOL,
                    dt_max: float | None = None):
    """Propagate, set the costate boundary from the terminal cost, verify.

    Returns ``(report, trajectory, costates)``.
    """
    traj = evolve_state(rho0, sched, spec, dt_max)
    lam = evolve_costate(terminal_cost_gradient(traj.final, target, cost_kind), traj, spec)
    return verify(traj, lam, sched, spec, tol_hc, tol_phi), traj, lam
