"""Protocol optimization: switching-time search and projected gradient descent."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels, nelder_mead
from .model import RHO_F, RHO_I, SystemSpec, as_bloch, drift_field, drive_field
from .pmp import DEFAULT_TOL, OptimalityReport, cell_switching, verify, verify_protocol
from .propagate import (
    DEFAULT_STEPS,
    Sampled,
    Segmented,
    SingularControlError,
    compile_schedule,
    evolve_costate,
    evolve_state,
    feedback_matrices,
    feedback_mode,
    terminal_cost,
    terminal_cost_gradient,
)

DEFAULT_CATALOG = ("X", "Y", "XY", "YX", "XYX", "YXY", "XSY", "YSX",
                   "YSXY", "XSXY", "XYSXY", "XYSYX")
DEFAULT_RESTARTS = 8
SEARCH_STEPS = 1024
ORDER_PENALTY = 100.0
FAIL_COST = 10.0
TIE_TOL = 1e-7
SNAP_RTOL = 1e-8
SATURATION_PENALTY = 10.0
# initial simplex edge, as a fraction of the mean segment duration
COLD_STEP = 0.15
WARM_STEP = 0.02


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProtocolStructure:
    """Bang/singular pattern: ``X`` = bang at -1, ``Y`` = bang at +1, ``S`` singular."""

    label: str

    def __post_init__(self):
        label = str(self.label).upper()
        if not label:
            raise ValueError("structure label must be non-empty")
        if set(label) - set("XYS"):
            raise ValueError(f"structure label {self.label!r} uses letters outside X, Y, S")
        for a, b in zip(label, label[1:]):
            if a == b and a in "XY":
                raise ValueError(f"structure {label!r} repeats bang {a} back to back")
        object.__setattr__(self, "label", label)

    def __len__(self) -> int:
        return len(self.label)

    @property
    def has_singular(self) -> bool:
        return "S" in self.label


def as_structure(s) -> ProtocolStructure:
    return s if isinstance(s, ProtocolStructure) else ProtocolStructure(s)


@dataclass
class OptimizeResult:
    structure: str
    durations: np.ndarray
    tf: float
    cost: float
    overlap: float
    evaluations: int
    report: OptimalityReport
    final_state: np.ndarray
    cost_kind: str = "overlap"
    controls: np.ndarray | None = None
    candidates: dict = field(default_factory=dict)

    def reduced(self) -> "OptimizeResult":
        """Same protocol with empty segments removed (e.g. XYSXY with no leading X is YSXY)."""
        if self.controls is not None:
            return self
        label, d = reduce_protocol(self.structure, self.durations)
        if label == self.structure:
            return self
        return dataclasses.replace(self, structure=label, durations=d)

    @property
    def schedule(self):
        if self.controls is not None:
            return Sampled(self.tf, self.controls)
        return Segmented.from_label(self.structure, self.durations)

    def to_dict(self, samples: bool = False) -> dict:
        d = {
            "structure": self.structure,
            "switch_times": [float(x) for x in self.durations],
            "t_f": self.tf,
            "cost": self.cost,
            "cost_kind": self.cost_kind,
            "overlap": self.overlap,
            "evaluations": self.evaluations,
            "final_state": [float(x) for x in self.final_state],
            "report": self.report.to_dict(samples=samples),
        }
        if self.controls is not None:
            d["controls"] = [float(x) for x in self.controls]
        if self.candidates:
            d["candidates"] = {k: float(v) for k, v in self.candidates.items()}
        return d


def reduce_protocol(label: str, durations, atol: float = 0.0) -> tuple[str, np.ndarray]:
    """Drop segments of length ``<= atol`` and merge equal neighbours."""
    letters, out = [], []
    for c, d in zip(label, np.asarray(durations, dtype=float)):
        if d <= atol:
            continue
        if letters and letters[-1] == c:
            out[-1] += d
        else:
            letters.append(c)
            out.append(float(d))
    if not letters:
        return label[:1], np.array([float(np.sum(durations))])
    return "".join(letters), np.array(out)


def embed_protocol(label: str, durations, into: str) -> np.ndarray | None:
    """Durations for structure ``into`` reproducing ``label``, zero-filling unmatched
    segments; ``None`` if ``label`` is not a subsequence of ``into``."""
    out = np.zeros(len(into))
    j = 0
    for c, d in zip(label, durations):
        while j < len(into) and into[j] != c:
            j += 1
        if j == len(into):
            return None
        out[j] = d
        j += 1
    return out


class SwitchingObjective:
    """Terminal cost as a function of the cumulative switching times.

    Points outside the ordered region ``0 <= s_1 <= ... <= s_{k-1} <= tf``
    are projected back onto it and charged ``ORDER_PENALTY`` per unit of
    distance, which keeps the objective continuous for the simplex.
    Singular segments whose feedback overshoots the control bound are
    charged ``SATURATION_PENALTY`` times the integrated overshoot: such an
    arc is not an admissible singular arc, and the clipped feedback tends
    to chatter at a rate set by the grid.
    """

    def __init__(self, structure, tf: float, spec: SystemSpec, rho0=RHO_I, target=RHO_F,
                 cost_kind: str = "overlap", steps: int = SEARCH_STEPS):
        self.structure = as_structure(structure)
        self.tf = float(tf)
        self.spec = spec
        self.rho0 = as_bloch(rho0)
        self.target = np.asarray(target, dtype=float)
        self.cost_kind = cost_kind
        self.dt_max = self.tf / steps if self.tf > 0 else 1.0
        probe = Segmented.from_label(self.structure.label, [0.0] * len(self.structure))
        self._kinds, self._uvals, _ = compile_schedule(probe, spec)
        self._A = drift_field(spec)
        self._B = drive_field(spec)
        self._FB = np.stack(feedback_matrices(spec))
        self._mode = feedback_mode(spec)
        self.evaluations = 0

    @property
    def dim(self) -> int:
        return len(self.structure) - 1

    def durations(self, x) -> tuple[np.ndarray, float]:
        x = np.asarray(x, dtype=float)
        y = np.maximum.accumulate(np.clip(x, 0.0, self.tf))
        violation = float(np.sum(np.abs(x - y)))
        edges = np.concatenate(([0.0], y, [self.tf]))
        return np.diff(edges), violation

    def cost_of_durations(self, durations) -> float:
        self.evaluations += 1
        out = _kernels.integrate_state(self.rho0, self._kinds, self._uvals,
                                       np.asarray(durations, dtype=float), self._A, self._B,
                                       self._FB, self._mode, self.spec.u_bound, self.dt_max)
        if out[5] != _kernels.STATUS_OK:
            return FAIL_COST
        return (terminal_cost(out[1][-1], self.target, self.cost_kind)
                + SATURATION_PENALTY * out[7])

    def __call__(self, x) -> float:
        d, violation = self.durations(x)
        return self.cost_of_durations(d) + ORDER_PENALTY * violation

    @staticmethod
    def to_switch_times(durations) -> np.ndarray:
        return np.cumsum(np.asarray(durations, dtype=float))[:-1]


def _normalize(d, tf: float) -> np.ndarray:
    d = np.clip(np.asarray(d, dtype=float), 0.0, None)
    s = d.sum()
    return np.full(d.shape, tf / d.size) if s <= 0 else d * (tf / s)


def _snap(d, tf: float) -> np.ndarray:
    # vanishing segments only add spurious switch points to the verification grid
    d = np.where(d < SNAP_RTOL * tf, 0.0, d)
    d[int(np.argmax(d))] += tf - d.sum()
    return d


def _starting_points(k: int, tf: float, init, restarts: int, seed: int) -> list[np.ndarray]:
    """Given starts first, then the equal split, then seeded perturbations of it."""
    starts = []
    if init is not None and not (isinstance(init, str) and init == "auto"):
        for row in np.atleast_2d(np.asarray(init, dtype=float)):
            if row.size != k:
                raise ValueError(f"initial durations have {row.size} entries, structure has {k}")
            starts.append(_normalize(row, tf))
    total = len(starts) + max(restarts, 1)
    equal = np.full(k, tf / k)
    starts.append(equal)
    rng = np.random.default_rng(seed)
    while len(starts) < total:
        starts.append(_normalize(equal * (1.0 + 0.8 * rng.uniform(-1.0, 1.0, k)), tf))
    return starts


def optimize_switching_times(structure, tf: float, spec: SystemSpec, rho0=RHO_I, target=RHO_F,
                             cost_kind: str = "overlap", init=None,
                             restarts: int = DEFAULT_RESTARTS, seed: int = 0,
                             search_steps: int = SEARCH_STEPS, steps: int = DEFAULT_STEPS,
                             tol_hc: float = DEFAULT_TOL, tol_phi: float = DEFAULT_TOL,
                             max_evals: int = 3000) -> OptimizeResult:
    """Nelder-Mead over the switching times of a fixed bang/singular structure.

    ``init`` is ``None`` (``"auto"``) or one or more duration vectors used
    as extra starting points ahead of the equal-duration start and its
    seeded perturbations.  The search runs on ``tf/search_steps``; the
    returned cost and report use ``tf/steps``.
    """
    st = as_structure(structure)
    k = len(st)
    tf = float(tf)
    obj = SwitchingObjective(st, tf, spec, rho0, target, cost_kind, search_steps)
    best_x, best_f = None, np.inf
    if k == 1 or tf == 0:
        best_d = np.array([tf] + [0.0] * (k - 1))
        best_f = obj.cost_of_durations(best_d)
    else:
        starts = _starting_points(k, tf, init, restarts, seed)
        n_given = len(starts) - max(restarts, 1)
        for i, start in enumerate(starts):
            x0 = obj.to_switch_times(start)
            scale = WARM_STEP if i < n_given else COLD_STEP
            res = nelder_mead.minimize(obj, x0, step=scale * tf / k, xtol=1e-7 * max(tf, 1.0),
                                       ftol=1e-12, max_evals=max_evals)
            if res.fun < best_f:
                best_x, best_f = res.x, res.fun
        best_d, _ = obj.durations(best_x)
    if best_f >= FAIL_COST:
        raise OptimizationError(f"no feasible protocol found for structure {st.label}")
    dt = tf / steps if tf > 0 else None
    try:
        snapped = _snap(best_d, tf) if tf > 0 else best_d
        sched = Segmented.from_label(st.label, snapped)
        report, traj, _ = verify_protocol(rho0, target, sched, spec, cost_kind, tol_hc, tol_phi, dt)
        best_d = snapped
    except SingularControlError:
        # the feedback may be undefined where a vanished segment would have started it
        sched = Segmented.from_label(st.label, best_d)
        report, traj, _ = verify_protocol(rho0, target, sched, spec, cost_kind, tol_hc, tol_phi, dt)
    cost = terminal_cost(traj.final, target, cost_kind)
    return OptimizeResult(st.label, best_d, tf, cost, float(np.dot(target, traj.final)),
                          obj.evaluations, report, traj.final.copy(), cost_kind)


def search_structures(tf: float, spec: SystemSpec, catalog: Sequence = DEFAULT_CATALOG,
                      rho0=RHO_I, target=RHO_F, cost_kind: str = "overlap",
                      warm_start: dict | None = None, **kwargs) -> OptimizeResult:
    """Optimize every catalog structure and return the lowest-cost one.

    Costs within ``TIE_TOL`` count as ties and go to the structure with
    fewer segments.  ``warm_start`` maps labels to duration vectors that
    are tried first (e.g. the neighbouring point of a sweep).
    """
    catalog = [as_structure(s) for s in catalog]
    if not catalog:
        raise ValueError("catalog must not be empty")
    warm_start = warm_start or {}
    results = []
    for st in catalog:
        init = warm_start.get(st.label)
        try:
            results.append(optimize_switching_times(st, tf, spec, rho0, target, cost_kind,
                                                    init=init, **kwargs))
        except (OptimizationError, SingularControlError):
            continue
    if not results:
        raise OptimizationError("no catalog structure produced a feasible protocol")
    return pick_winner(results)


def pick_winner(results: Sequence[OptimizeResult]) -> OptimizeResult:
    """Lowest cost after reducing each protocol; near-ties go to fewer segments."""
    reduced = [r.reduced() for r in results]
    best = min(r.cost for r in reduced)
    ties = [r for r in reduced if r.cost <= best + TIE_TOL]
    winner = min(ties, key=lambda r: (len(r.structure), r.cost))
    winner.candidates = {r.structure: r.cost for r in results}
    return winner



def _sampled_cost_grad(u, tf, spec, rho0, target, cost_kind, dt_max):
    sched = Sampled(tf, u)
    traj = evolve_state(rho0, sched, spec, dt_max)
    lam = evolve_costate(terminal_cost_gradient(traj.final, target, cost_kind), traj, spec)
    phi = cell_switching(traj, lam, sched, spec)
    return terminal_cost(traj.final, target, cost_kind), phi


def gradient_descent_control(N: int, tf: float, spec: SystemSpec, cost_kind: str = "frobenius",
                             rate: float | None = None, max_iter: int = 20000,
                             stop_tol: float = 1e-7, u_init=None, rho0=RHO_I, target=RHO_F,
                             method: str = "gradient", steps_per_cell: int = 8,
                             tol_hc: float = DEFAULT_TOL,
                             tol_phi: float = DEFAULT_TOL) -> OptimizeResult:
    """Projected descent on a piecewise-constant control with ``N`` cells.

    Each iteration moves ``u_k`` against the cell-averaged switching
    function and clips to the control bound.  ``rate`` defaults to
    ``0.5 * tf / N``; a step that raises the cost is retried at half the
    rate, an accepted one lets the rate grow by ``1.5``.
    ``method="cg"`` uses Polak-Ribiere directions instead of the plain
    gradient, falling back to it whenever the direction stops descending.
    Iteration ends once the largest control change is below ``stop_tol``.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    if tf <= 0:
        raise ValueError("tf must be positive")
    if method not in ("gradient", "cg"):
        raise ValueError(f"unknown method {method!r}")
    rate = 0.5 * tf / N if rate is None else float(rate)
    if rate <= 0:
        raise ValueError("rate must be positive")
    rho0, target = as_bloch(rho0), as_bloch(target)
    ub = spec.u_bound
    if u_init is None:
        u = np.zeros(N)
    else:
        u = np.asarray(u_init.u if isinstance(u_init, Sampled) else u_init, dtype=float).copy()
        if u.shape != (N,):
            raise ValueError(f"u_init must have {N} entries")
    u = np.clip(u, -ub, ub)
    dt_max = tf / (N * steps_per_cell)
    cost, phi = _sampled_cost_grad(u, tf, spec, rho0, target, cost_kind, dt_max)
    evaluations = 1
    direction = -phi
    steepest = True
    for _ in range(max_iter):
        start_rate = rate
        accepted = False
        while True:
            trial = np.clip(u + rate * direction, -ub, ub)
            if np.max(np.abs(trial - u)) < stop_tol:
                break
            c_new, phi_new = _sampled_cost_grad(trial, tf, spec, rho0, target, cost_kind, dt_max)
            evaluations += 1
            if c_new <= cost:
                accepted = True
                break
            rate *= 0.5
        if not accepted:
            if steepest:
                break
            # a conjugate direction that fails the line search is dropped
            direction, steepest, rate = -phi, True, start_rate
            continue
        phi_prev, used = phi, direction
        u, cost, phi = trial, c_new, phi_new
        rate *= 1.5
        direction, steepest = -phi, True
        if method == "cg":
            free = ~(((u >= ub) & (phi < 0)) | ((u <= -ub) & (phi > 0)))
            denom = float(np.dot(phi_prev[free], phi_prev[free]))
            beta = max(0.0, float(np.dot(phi[free], (phi - phi_prev)[free])) / denom) if denom > 0 else 0.0
            if beta > 0:
                cand = np.where(free, -phi + beta * used, -phi)
                if np.dot(cand, phi) < 0:
                    direction, steepest = cand, False
    sched = Sampled(tf, u)
    report, traj, _ = verify_protocol(rho0, target, sched, spec, cost_kind, tol_hc, tol_phi,
                                      dt_max=dt_max)
    return OptimizeResult("sampled", np.full(N, tf / N), tf,
                          terminal_cost(traj.final, target, cost_kind),
                          float(np.dot(target, traj.final)), evaluations, report,
                          traj.final.copy(), cost_kind, controls=u)
