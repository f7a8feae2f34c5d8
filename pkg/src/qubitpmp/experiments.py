"""Overlap-vs-time sweeps, zero-control baselines, retention scans, case classification."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import RHO_F, RHO_I, SystemSpec, as_bloch
from .optimize import (
    DEFAULT_CATALOG,
    DEFAULT_RESTARTS,
    OptimizationError,
    OptimizeResult,
    as_structure,
    embed_protocol,
    optimize_switching_times,
    pick_winner,
)
from .propagate import Sampled, SingularControlError, evolve_state, terminal_cost

log = logging.getLogger(__name__)

SATURATION_TOL = 0.01
PEAK_BISECTIONS = 8


@dataclass(frozen=True)
class Scenario:
    initial: np.ndarray
    target: np.ndarray
    spec: SystemSpec
    cost_kind: str = "overlap"

    def __post_init__(self):
        object.__setattr__(self, "initial", as_bloch(self.initial))
        object.__setattr__(self, "target", as_bloch(self.target))

    @classmethod
    def prepare(cls, spec: SystemSpec, cost_kind: str = "overlap") -> "Scenario":
        """Steer the ground state of sigma_x + 2 sigma_z to that of sigma_x - 2 sigma_z."""
        return cls(RHO_I, RHO_F, spec, cost_kind)

    @classmethod
    def retain(cls, spec: SystemSpec, cost_kind: str = "overlap") -> "Scenario":
        """Keep the initial state: target equals initial."""
        return cls(RHO_I, RHO_I, spec, cost_kind)

    def to_dict(self) -> dict:
        return {"initial": self.initial.tolist(), "target": self.target.tolist(),
                "spec": self.spec.to_dict(), "cost_kind": self.cost_kind}


@dataclass
class SweepRecord:
    tf: float
    overlap: float
    structure: str
    switch_times: list
    hc_sign: str
    passed: bool = True
    hc_mean: float = float("nan")
    cost: float = float("nan")
    candidates: dict = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {"tf": self.tf, "overlap": self.overlap, "structure": self.structure,
                "switch_times": list(self.switch_times), "hc_sign": self.hc_sign,
                "passed": self.passed, "hc_mean": self.hc_mean, "cost": self.cost}


def default_grid(n: int = 60, start: float = 0.05 * np.pi, stop: float = 2.0 * np.pi) -> np.ndarray:
    return np.linspace(start, stop, n)


def _record(res: OptimizeResult) -> SweepRecord:
    return SweepRecord(res.tf, res.overlap, res.structure, [float(x) for x in res.durations],
                       res.report.hc_sign, res.report.passed, res.report.hc_mean, res.cost,
                       dict(res.candidates))


def _warm_inits(durations, label: str, tf_prev: float, tf: float) -> list[np.ndarray]:
    """Guesses at ``tf`` from an optimum at ``tf_prev``: stretch singular parts, or rescale."""
    d = np.asarray(durations, dtype=float)
    out = []
    s_idx = [i for i, c in enumerate(label) if c == "S"]
    if s_idx:
        ext = d.copy()
        ext[s_idx] += (tf - tf_prev) / len(s_idx)
        if np.all(ext >= 0):
            out.append(ext)
    if tf_prev > 0:
        out.append(d * (tf / tf_prev))
    return out


def _optimize_one(args):
    label, tf, scenario, init, restarts, seed, tol_hc, tol_phi = args
    try:
        return optimize_switching_times(label, tf, scenario.spec, scenario.initial, scenario.target,
                                        scenario.cost_kind, init=init, restarts=restarts,
                                        seed=seed, tol_hc=tol_hc, tol_phi=tol_phi)
    except (OptimizationError, SingularControlError):
        return None


def _dedupe(inits, tol: float) -> list[np.ndarray]:
    out = []
    for d in inits:
        if all(np.max(np.abs(d - e)) > tol for e in out):
            out.append(d)
    return out


class _Searcher:
    """Structure search at one ``tf`` with warm starts from already solved times."""

    def __init__(self, scenario: Scenario, catalog, restarts: int, seed: int, workers: int,
                 tol_hc: float, tol_phi: float):
        self.scenario = scenario
        self.catalog = [as_structure(s).label for s in catalog]
        if not self.catalog:
            raise ValueError("catalog must not be empty")
        self.restarts = restarts
        self.seed = seed
        self.tol_hc = tol_hc
        self.tol_phi = tol_phi
        self.pool = ProcessPoolExecutor(workers) if workers and workers > 1 else None
        # reduced label -> {tf: (cost, durations)}
        self.solved: dict[str, dict[float, tuple[float, np.ndarray]]] = {}

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _remember(self, res: OptimizeResult):
        red = res.reduced()
        known = self.solved.setdefault(red.structure, {})
        if red.tf not in known or red.cost < known[red.tf][0]:
            known[red.tf] = (red.cost, red.durations)

    def _inits(self, label: str, tf: float):
        inits = []
        for sub, known in self.solved.items():
            tf_prev = min(known, key=lambda t: abs(t - tf))
            d = embed_protocol(sub, known[tf_prev][1], label)
            if d is not None:
                inits.extend(_warm_inits(d, label, tf_prev, tf))
        inits = _dedupe(inits, 1e-6 * tf)
        return np.array(inits) if inits else None

    def solve(self, tf: float) -> SweepRecord:
        jobs = [(label, tf, self.scenario, self._inits(label, tf), self.restarts, self.seed,
                 self.tol_hc, self.tol_phi) for label in self.catalog]
        mapper = self.pool.map if self.pool is not None else map
        results = [r for r in mapper(_optimize_one, jobs) if r is not None]
        if not results:
            raise OptimizationError(f"no feasible protocol at tf={tf}")
        for r in results:
            self._remember(r)
        winner = pick_winner(results)
        log.info("tf=%.4fpi overlap=%.6f structure=%s %s", tf / np.pi, winner.overlap,
                 winner.structure, winner.report.summary())
        return _record(winner)


def sweep_tf(scenario: Scenario, t_grid: Sequence[float], catalog=DEFAULT_CATALOG,
             restarts: int = DEFAULT_RESTARTS, seed: int = 0, workers: int = 1,
             refine_transitions: int = 0, refine_peak: bool = False,
             tol_hc: float = 1e-3, tol_phi: float = 1e-3) -> list[SweepRecord]:
    """Optimal protocol and target-state overlap at every ``tf`` of an ascending grid.

    Points are solved in order; each structure is warm-started from its
    optimum at the nearest solved time.  ``refine_transitions`` bisects
    the gaps where the winning structure changes that many times;
    ``refine_peak`` bisects on the sign of the c-Hamiltonian next to an
    interior overlap maximum, where the optimal final time has ``H_c = 0``.
    """
    grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("t_grid must be strictly ascending")
    searcher = _Searcher(scenario, catalog, restarts, seed, workers, tol_hc, tol_phi)
    try:
        records = [searcher.solve(tf) for tf in grid]
        for _ in range(refine_transitions):
            extra = [0.5 * (a.tf + b.tf) for a, b in zip(records, records[1:])
                     if a.structure != b.structure]
            if not extra:
                break
            records.extend(searcher.solve(tf) for tf in extra)
            records.sort(key=lambda r: r.tf)
        if refine_peak:
            records = _refine_peak(records, searcher)
    finally:
        searcher.close()
    return records


def _refine_peak(records: list[SweepRecord], searcher: _Searcher) -> list[SweepRecord]:
    """Bisect toward the zero of the c-Hamiltonian next to the overlap maximum."""
    k = best_local_maximum(records)
    if k is None:
        return records
    here = records[k]
    if here.hc_mean > 0 and records[k - 1].hc_mean < 0:
        lo, hi = records[k - 1], here
    elif here.hc_mean < 0 and records[k + 1].hc_mean > 0:
        lo, hi = here, records[k + 1]
    else:
        return records
    new = []
    for _ in range(PEAK_BISECTIONS):
        mid = searcher.solve(0.5 * (lo.tf + hi.tf))
        new.append(mid)
        if abs(mid.hc_mean) < searcher.tol_hc:
            break
        if mid.hc_mean < 0:
            lo = mid
        else:
            hi = mid
    return sorted(records + new, key=lambda r: r.tf)


def interior_maximum(records: Sequence[SweepRecord]) -> int | None:
    """Index of the largest overlap if it is strictly inside the grid."""
    if len(records) < 3:
        return None
    ov = np.array([r.overlap for r in records])
    k = int(np.argmax(ov))
    if k == 0 or k == len(ov) - 1:
        return None
    return k


def best_local_maximum(records: Sequence[SweepRecord]) -> int | None:
    """Index of the highest interior local maximum of the overlap.

    Unlike :func:`interior_maximum` this finds the retention peak, where
    the global maximum sits at the shortest time.
    """
    ov = np.array([r.overlap for r in records])
    ks = [k for k in range(1, len(ov) - 1) if ov[k] >= ov[k - 1] and ov[k] > ov[k + 1]]
    return max(ks, key=lambda k: ov[k]) if ks else None


def structure_transitions(records: Sequence[SweepRecord]) -> list[tuple[float, float, str, str]]:
    """``(tf_left, tf_right, old, new)`` for each change of winning structure."""
    return [(a.tf, b.tf, a.structure, b.structure)
            for a, b in zip(records, records[1:]) if a.structure != b.structure]


def structure_sequence(records: Sequence[SweepRecord]) -> list[str]:
    seq = []
    for r in records:
        if not seq or seq[-1] != r.structure:
            seq.append(r.structure)
    return seq


def _zero_time_overlap(scenario: Scenario) -> float:
    r, f = scenario.initial, scenario.target
    if np.array_equal(r, f) and abs(np.linalg.norm(r) - 1.0) < 1e-12:
        return 1.0  # a pure state overlaps itself exactly; avoid |r|^2 rounding
    return float(np.dot(f, r))


def zero_control_baseline(scenario: Scenario, t_grid: Sequence[float]) -> list[SweepRecord]:
    """Overlap reached with ``u = 0`` throughout."""
    out = []
    for tf in np.asarray(t_grid, dtype=float):
        if tf == 0:
            final = scenario.initial
            ov = _zero_time_overlap(scenario)
        else:
            final = evolve_state(scenario.initial, Sampled(tf, [0.0]), scenario.spec).final
            ov = float(np.dot(scenario.target, final))
        out.append(SweepRecord(float(tf), ov, "0", [float(tf)], "n/a", True, float("nan"),
                               terminal_cost(final, scenario.target, scenario.cost_kind)))
    return out


def retention_scan(spec: SystemSpec, t_grid: Sequence[float], catalog=DEFAULT_CATALOG,
                   **kwargs) -> list[SweepRecord]:
    """Sweep for the retention task; a ``tf = 0`` grid point gives overlap exactly 1."""
    scenario = Scenario.retain(spec)
    grid = np.asarray(t_grid, dtype=float)
    head = []
    if grid.size and grid[0] == 0:
        ov = _zero_time_overlap(scenario)
        head = [SweepRecord(0.0, ov, "", [], "n/a", True, float("nan"), -ov)]
        grid = grid[1:]
    return head + (sweep_tf(scenario, grid, catalog, **kwargs) if grid.size else [])


def is_saturated(records: Sequence[SweepRecord], t_a: float = 1.6 * np.pi,
                 t_b: float = 2.0 * np.pi, tol: float = SATURATION_TOL) -> bool:
    """``|overlap(t_b) - overlap(t_a)| < tol`` using the nearest grid points."""
    tfs = np.array([r.tf for r in records])
    a = records[int(np.argmin(np.abs(tfs - t_a)))]
    b = records[int(np.argmin(np.abs(tfs - t_b)))]
    return abs(b.overlap - a.overlap) < tol


def classify_records(records: Sequence[SweepRecord], tol: float = 1e-4) -> str:
    """``case_i`` if the overlap is still (weakly) rising at the end of the sweep,
    ``case_ii`` if an interior maximum exceeds the final value by more than ``tol``."""
    ov = np.array([r.overlap for r in records])
    k = interior_maximum(records)
    if k is not None and ov[k] - ov[-1] > tol:
        return "case_ii"
    return "case_i"


def case_classifier(spec: SystemSpec, t_probe=(1.6 * np.pi, 2.0 * np.pi), n: int = 60,
                    catalog=DEFAULT_CATALOG, **kwargs) -> str:
    """Long-time regime of the sigma_x channel for the preparation task."""
    if spec.channel != "x":
        raise ValueError("case classification applies to the sigma_x channel")
    grid = default_grid(n, stop=max(t_probe))
    records = sweep_tf(Scenario.prepare(spec), grid, catalog, **kwargs)
    return classify_records(records)


def write_sweep_csv(path, records: Sequence[SweepRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tf", "overlap", "structure", "hc_sign", "switch_times", "passed"])
        for r in records:
            w.writerow([repr(float(r.tf)), repr(float(r.overlap)), r.structure, r.hc_sign,
                        json.dumps([float(x) for x in r.switch_times]), int(bool(r.passed))])


def read_sweep_csv(path) -> list[SweepRecord]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [SweepRecord(float(r["tf"]), float(r["overlap"]), r["structure"],
                        json.loads(r["switch_times"]), r["hc_sign"],
                        bool(int(r.get("passed", 1)))) for r in rows]
