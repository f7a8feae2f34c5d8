"""Forward/backward propagation of state, costate and wave function."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
import scipy.linalg

from . import _kernels
from .model import (
    SystemSpec,
    PureState,
    as_bloch,
    drift_field,
    drive_field,
    hamiltonian_matrix,
    density_matrix,
)

DEFAULT_STEPS = 4096
SEGMENT_KINDS = ("X", "Y", "S")
SUM_TOL = 1e-12
NORM_TOL = 1e-9


class SingularControlError(RuntimeError):
    """Singular feedback could not be evaluated during propagation."""

    def __init__(self, t: float, detail: str = ""):
        self.t = t
        msg = f"singular control undefined at t={t:.12g}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass(frozen=True)
class Segment:
    """``X`` is the bang at ``-u_bound``, ``Y`` at ``+u_bound``, ``S`` singular."""

    kind: str
    duration: float

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"segment kind must be one of {SEGMENT_KINDS}, got {self.kind!r}")
        if not self.duration >= 0:
            raise ValueError(f"segment duration must be >= 0, got {self.duration}")
        object.__setattr__(self, "duration", float(self.duration))


@dataclass(frozen=True)
class Segmented:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @classmethod
    def from_label(cls, label: str, durations: Sequence[float]) -> "Segmented":
        if len(label) != len(durations):
            raise ValueError(f"{len(label)} segment kinds but {len(durations)} durations")
        return cls(tuple(Segment(k, d) for k, d in zip(label, durations)))

    @property
    def label(self) -> str:
        return "".join(s.kind for s in self.segments)

    @property
    def durations(self) -> np.ndarray:
        return np.array([s.duration for s in self.segments])

    @property
    def tf(self) -> float:
        return math.fsum(s.duration for s in self.segments)

    def switch_times(self) -> np.ndarray:
        """Interior segment boundaries, in time."""
        return np.cumsum(self.durations)[:-1]

    def to_dict(self) -> dict:
        return {"segments": [{"kind": s.kind, "duration": s.duration} for s in self.segments]}


@dataclass(frozen=True)
class Sampled:
    """Piecewise-constant control on ``N`` equal cells covering ``[0, tf]``."""

    tf: float
    u: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "tf", float(self.tf))
        object.__setattr__(self, "u", tuple(float(x) for x in np.ravel(self.u)))
        if self.tf < 0:
            raise ValueError("tf must be >= 0")
        if len(self.u) == 0:
            raise ValueError("sampled control needs at least one value")

    @property
    def n(self) -> int:
        return len(self.u)

    @property
    def dt(self) -> float:
        return self.tf / self.n

    def cell_midpoints(self) -> np.ndarray:
        return (np.arange(self.n) + 0.5) * self.dt

    def to_dict(self) -> dict:
        return {"tf": self.tf, "u": list(self.u)}


ControlSchedule = Union[Segmented, Sampled]


def schedule_from_dict(data: dict) -> ControlSchedule:
    """Schedule from JSON; optimizer result objects are accepted as well."""
    if "segments" in data:
        return Segmented(tuple(Segment(s["kind"], s["duration"]) for s in data["segments"]))
    if "controls" in data:
        return Sampled(data["t_f"], data["controls"])
    if "structure" in data:
        d = data["durations"] if "durations" in data else data["switch_times"]
        return Segmented.from_label(data["structure"], d)
    if "u" in data:
        return Sampled(data["tf"], data["u"])
    raise ValueError("schedule needs 'segments', 'structure'+'durations' or 'tf'+'u'")


def schedule_tf(sched: ControlSchedule) -> float:
    return sched.tf


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    # segment each grid point starts, and per-step controls at RK4 stages
    segment_index: np.ndarray = field(repr=False)
    stage_controls: np.ndarray = field(repr=False)
    kinds: np.ndarray = field(repr=False)
    # time integral of how far singular feedback overshoots the control bound
    saturation: float = 0.0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def tf(self) -> float:
        return float(self.times[-1])


@dataclass
class CostateTrajectory:
    times: np.ndarray
    costates: np.ndarray


def uses_tangent_feedback(spec: SystemSpec) -> bool:
    """True when the singular control lives in the sphere's tangent plane."""
    return not spec.dissipative or spec.channel == "uniform"


def feedback_mode(spec: SystemSpec) -> int:
    return _kernels.FEEDBACK_TANGENT if uses_tangent_feedback(spec) else _kernels.FEEDBACK_DAMPED


def feedback_matrices(spec: SystemSpec):
    """``(F, B, C, V, W)``: drift used by the feedback, drive and brackets.

    ``C = [f,g]``, ``V = [f,[f,g]]``, ``W = [g,[f,g]]`` as matrices.
    """
    if uses_tangent_feedback(spec):
        F = drift_field(SystemSpec(spec.xi, "none", 0.0, spec.u_bound))
    else:
        F = drift_field(spec)
    B = drive_field(spec)
    C = lie_bracket(F, B)
    return F, B, C, lie_bracket(F, C), lie_bracket(B, C)


def lie_bracket(A, B) -> np.ndarray:
    """Matrix of ``[f, g]`` for ``f = A r``, ``g = B r``.

    The component convention ``[f,g]^i = <f, grad g^i> - <g, grad f^i>``
    gives ``B A - A B``; with it ``[f, g]`` for the closed Landau-Zener
    drift and drive equals twice the sigma_y field.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    return B @ A - A @ B


def compile_schedule(sched: ControlSchedule, spec: SystemSpec):
    """Flatten a schedule into ``(kinds, uvals, durations)`` arrays."""
    if isinstance(sched, Segmented):
        kinds = np.array([_kernels.KIND_SINGULAR if s.kind == "S" else _kernels.KIND_CONST
                          for s in sched.segments], dtype=np.int64)
        uvals = np.array([{"X": -1.0, "Y": 1.0, "S": 0.0}[s.kind] * spec.u_bound
                          for s in sched.segments])
        durations = sched.durations.astype(float)
    elif isinstance(sched, Sampled):
        kinds = np.zeros(sched.n, dtype=np.int64)
        uvals = np.clip(np.asarray(sched.u, dtype=float), -spec.u_bound, spec.u_bound)
        durations = np.full(sched.n, sched.dt)
    else:
        raise TypeError(f"not a control schedule: {type(sched).__name__}")
    return kinds, uvals, durations


def default_dt(tf: float) -> float:
    return tf / DEFAULT_STEPS if tf > 0 else 1.0


def evolve_state(rho0, sched: ControlSchedule, spec: SystemSpec, dt_max: float | None = None) -> Trajectory:
    """Integrate the Bloch equation under ``sched`` with fixed-step RK4.

    Steps never exceed ``dt_max`` (default ``tf/4096``) and segment
    boundaries are grid points.  Singular segments evaluate the feedback
    law at every RK stage.
    """
    r0 = as_bloch(rho0)
    tf = sched.tf
    if dt_max is None:
        dt_max = default_dt(tf)
    if not dt_max > 0:
        raise ValueError("dt_max must be > 0")
    kinds, uvals, durations = compile_schedule(sched, spec)
    FB = np.stack(feedback_matrices(spec))
    times, states, u_grid, seg_index, stage_u, status, t_fail, excess = _kernels.integrate_state(
        r0, kinds, uvals, durations, drift_field(spec), drive_field(spec), FB,
        feedback_mode(spec), spec.u_bound, float(dt_max))
    if status != _kernels.STATUS_OK:
        raise SingularControlError(float(t_fail), "feedback denominator vanished")
    return Trajectory(times, states, u_grid, seg_index, stage_u, kinds, float(excess))


def terminal_state(rho0, sched: ControlSchedule, spec: SystemSpec, dt_max: float | None = None) -> np.ndarray:
    return evolve_state(rho0, sched, spec, dt_max).final


def evolve_costate(lambda_tf, realized: Trajectory, spec: SystemSpec) -> CostateTrajectory:
    """Integrate ``dlam/dt = 2 h x lam + Gamma P lam`` backward from ``tf``.

    The controls are replayed from the forward pass, so both passes share
    grid and stage values.
    """
    lam = np.asarray(lambda_tf, dtype=float).reshape(3)
    times = realized.times
    if realized.stage_controls.shape[0] != times.shape[0] - 1:
        raise ValueError("trajectory grid and recorded controls do not match")
    A = drift_field(spec)
    B = drive_field(spec)
    lams = _kernels.integrate_costate(lam, times, realized.stage_controls, A, B)
    return CostateTrajectory(times.copy(), lams)


def terminal_cost(rho_tf, target, kind: str = "overlap") -> float:
    """``overlap``: ``-<target, r>``; ``frobenius``: ``|target - r|^2 / 2``.

    The frobenius form equals the entrywise squared distance between the
    two 2x2 density matrices.
    """
    r = np.asarray(rho_tf, dtype=float)
    t = np.asarray(target, dtype=float)
    if kind == "overlap":
        return float(-np.dot(t, r))
    if kind == "frobenius":
        d = t - r
        return float(0.5 * np.dot(d, d))
    raise ValueError(f"unknown cost kind {kind!r}")


def terminal_cost_gradient(rho_tf, target, kind: str = "overlap") -> np.ndarray:
    r = np.asarray(rho_tf, dtype=float)
    t = np.asarray(target, dtype=float)
    if kind == "overlap":
        return -t.copy()
    if kind == "frobenius":
        return r - t
    raise ValueError(f"unknown cost kind {kind!r}")


def expm_oracle(rho0, sched: Segmented, spec: SystemSpec) -> np.ndarray:
    """Exact propagation through bang segments via matrix exponentials."""
    r = as_bloch(rho0).copy()
    if not isinstance(sched, Segmented):
        raise TypeError("expm oracle needs a segmented schedule")
    A = drift_field(spec)
    B = drive_field(spec)
    for seg in sched.segments:
        if seg.kind == "S":
            raise ValueError("expm oracle cannot propagate singular segments")
        u = (-1.0 if seg.kind == "X" else 1.0) * spec.u_bound
        r = scipy.linalg.expm((A + u * B) * seg.duration) @ r
    return r


def _schrodinger_rhs(H, psi):
    return -1j * (H @ psi)


def evolve_wavefunction(psi0: PureState, sched: ControlSchedule, spec: SystemSpec,
                        dt_max: float | None = None) -> list[PureState]:
    """RK4 for ``i d|psi>/dt = H(u)|psi>`` on the same grid as :func:`evolve_state`.

    Only meaningful without dissipation.  Singular segments use the
    feedback law evaluated on the Bloch vector of the current state.
    """
    if spec.dissipative:
        raise ValueError("wave-function propagation requires a non-dissipative system")
    psi = np.asarray(psi0.vector, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-12:
        raise ValueError("initial state is not normalized")
    tf = sched.tf
    if dt_max is None:
        dt_max = default_dt(tf)
    kinds, uvals, durations = compile_schedule(sched, spec)
    FB = np.stack(feedback_matrices(spec))
    mode = feedback_mode(spec)

    def control(kind, uval, state, t):
        if kind == _kernels.KIND_CONST:
            return uval
        c0, c1 = state
        off = np.conj(c0) * c1
        r = np.array([2 * off.real, 2 * off.imag, abs(c0) ** 2 - abs(c1) ** 2])
        u, ok = _kernels.singular_feedback(r, FB, mode)
        if not ok:
            raise SingularControlError(t)
        return min(max(u, -spec.u_bound), spec.u_bound)

    H0 = hamiltonian_matrix(0.0, spec)
    Hd = hamiltonian_matrix(1.0, spec) - H0
    out = [PureState.from_vector(psi)]
    t = 0.0
    for kind, uval, d in zip(kinds, uvals, durations):
        if d <= 0:
            continue
        m = max(1, int(math.ceil(d / dt_max - 1e-9)))
        h = d / m
        for _ in range(m):
            u1 = control(kind, uval, psi, t)
            k1 = _schrodinger_rhs(H0 + u1 * Hd, psi)
            s = psi + 0.5 * h * k1
            u2 = control(kind, uval, s, t)
            k2 = _schrodinger_rhs(H0 + u2 * Hd, s)
            s = psi + 0.5 * h * k2
            u3 = control(kind, uval, s, t)
            k3 = _schrodinger_rhs(H0 + u3 * Hd, s)
            s = psi + h * k3
            u4 = control(kind, uval, s, t)
            k4 = _schrodinger_rhs(H0 + u4 * Hd, s)
            psi = psi + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            t += h
            out.append(PureState.from_vector(psi))
    return out


def evolve_wavefunction_costate(pi_tf, realized: Trajectory, spec: SystemSpec) -> np.ndarray:
    """Backward Schrodinger propagation of the costate ``|Pi>``.

    Replays the controls recorded in ``realized``; returns an array of
    shape ``(len(times), 2)``.
    """
    if spec.dissipative:
        raise ValueError("wave-function costate requires a non-dissipative system")
    H0 = hamiltonian_matrix(0.0, spec)
    Hd = hamiltonian_matrix(1.0, spec) - H0
    times = realized.times
    stage = realized.stage_controls
    pis = np.empty((times.shape[0], 2), dtype=complex)
    p = np.asarray(pi_tf, dtype=complex).reshape(2)
    pis[-1] = p
    for n in range(stage.shape[0] - 1, -1, -1):
        h = -(times[n + 1] - times[n])
        ua, um, ub = stage[n]
        k1 = _schrodinger_rhs(H0 + ub * Hd, p)
        k2 = _schrodinger_rhs(H0 + um * Hd, p + 0.5 * h * k1)
        k3 = _schrodinger_rhs(H0 + um * Hd, p + 0.5 * h * k2)
        k4 = _schrodinger_rhs(H0 + ua * Hd, p + h * k3)
        p = p + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        pis[n] = p
    return pis


def wavefunction_costate_boundary(psi_tf: PureState, psi_f: PureState) -> np.ndarray:
    """``|Pi(tf)> = -|psi_f><psi_f|Psi(tf)>``."""
    f = psi_f.vector
    return -f * np.vdot(f, psi_tf.vector)


def wavefunction_overlap(psi: PureState, target: PureState) -> float:
    return float(abs(np.vdot(target.vector, psi.vector)) ** 2)


def write_trajectory_csv(path, traj: Trajectory, costates: CostateTrajectory | None = None) -> None:
    """CSV with header ``t,u,rx,ry,rz`` (plus ``lx,ly,lz`` with a costate)."""
    header = ["t", "u", "rx", "ry", "rz"]
    if costates is not None:
        if costates.costates.shape[0] != traj.times.shape[0]:
            raise ValueError("costate grid does not match trajectory")
        header += ["lx", "ly", "lz"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k, t in enumerate(traj.times):
            row = [t, traj.controls[k], *traj.states[k]]
            if costates is not None:
                row += list(costates.costates[k])
            w.writerow([repr(float(x)) for x in row])


def read_trajectory_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    return {name: body[:, i] for i, name in enumerate(header)}
