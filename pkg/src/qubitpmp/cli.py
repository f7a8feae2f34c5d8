"""Command-line front end: ``qubitpmp <command> [options]``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__, experiments, geometry, optimize, pmp
from .model import PureState, SystemSpec, as_bloch, psi_initial, psi_target
from .propagate import (
    Sampled,
    Segmented,
    SingularControlError,
    evolve_costate,
    evolve_state,
    schedule_from_dict,
    terminal_cost_gradient,
    write_trajectory_csv,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2

DEFAULTS = {
    "xi": 0.2,
    "channel": "none",
    "gamma": 0.0,
    "u_bound": 1.0,
    "scenario": "prepare",
    "initial": None,
    "target": None,
    "cost": "overlap",
    "tf": None,
    "grid": "0.05pi:2pi:60",
    "catalog": ",".join(optimize.DEFAULT_CATALOG),
    "structure": None,
    "schedule": None,
    "restarts": optimize.DEFAULT_RESTARTS,
    "seed": 0,
    "workers": None,
    "tol_hc": pmp.DEFAULT_TOL,
    "tol_phi": pmp.DEFAULT_TOL,
    "steps": 4096,
    "out": None,
    "n": 500,
    "rate": None,
    "max_iter": 20000,
    "stop_tol": 1e-7,
    "method": "gradient",
    "states": None,
    "thetas": 33,
    "refine_peak": False,
    "refine_transitions": 0,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_TIME = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi|π)?\s*$")


def parse_time(text) -> float:
    """``"0.42pi"``, ``"pi"``, ``"2*pi"`` or a plain number."""
    if isinstance(text, (int, float)):
        return float(text)
    m = _TIME.match(str(text))
    if not m or (m.group(1) is None and m.group(2) is None):
        raise UsageError(f"cannot parse time {text!r}")
    value = float(m.group(1)) if m.group(1) is not None else 1.0
    return value * math.pi if m.group(2) else value


def parse_grid(text) -> np.ndarray:
    """``start:stop:n`` (inclusive linspace) or a comma list of times."""
    if isinstance(text, (list, tuple)):
        return np.array([parse_time(t) for t in text])
    text = str(text)
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"grid must be start:stop:n, got {text!r}")
        try:
            n = int(parts[2])
        except ValueError as exc:
            raise UsageError(f"grid point count {parts[2]!r} is not an integer") from exc
        if n < 1:
            raise UsageError("grid needs at least one point")
        return np.linspace(parse_time(parts[0]), parse_time(parts[1]), n)
    return np.array([parse_time(t) for t in text.split(",") if t.strip()])


def _parse_vector(text, name: str) -> np.ndarray:
    try:
        v = np.array([float(x) for x in str(text).split(",")])
    except ValueError as exc:
        raise UsageError(f"{name}: expected comma-separated numbers") from exc
    if v.shape != (3,):
        raise UsageError(f"{name}: expected 3 components")
    return v


def _parse_state(text) -> PureState:
    try:
        c = [complex(x.replace(" ", "")) for x in str(text).split(",")]
    except ValueError as exc:
        raise UsageError(f"cannot parse state {text!r}") from exc
    if len(c) != 2:
        raise UsageError("a state needs two amplitudes c0,c1")
    psi = PureState(*c)
    if not psi.norm > 0:
        raise UsageError("state has zero norm")
    return psi.normalized()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _load_json_arg(text):
    """Inline JSON, or a path to a JSON file (optionally prefixed with ``@``)."""
    text = str(text)
    path = text[1:] if text.startswith("@") else text
    if os.path.exists(path):
        text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid JSON: {exc}") from exc


# ---------------------------------------------------------------- config

class Config(dict):
    @property
    def spec(self) -> SystemSpec:
        try:
            return SystemSpec(xi=float(self["xi"]), channel=self["channel"],
                              gamma=float(self["gamma"]), u_bound=float(self["u_bound"]))
        except (ValueError, TypeError) as exc:
            raise UsageError(str(exc)) from exc

    @property
    def scenario(self) -> experiments.Scenario:
        kind = self["scenario"]
        spec = self.spec
        try:
            if kind == "prepare":
                sc = experiments.Scenario.prepare(spec, self["cost"])
            elif kind == "retain":
                sc = experiments.Scenario.retain(spec, self["cost"])
            elif kind == "custom":
                if self["initial"] is None or self["target"] is None:
                    raise UsageError("custom scenario needs --initial and --target")
                sc = experiments.Scenario(_parse_vector(self["initial"], "initial"),
                                          _parse_vector(self["target"], "target"), spec,
                                          self["cost"])
            else:
                raise UsageError(f"unknown scenario {kind!r}")
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        if kind != "custom":
            changes = {}
            if self["initial"] is not None:
                changes["initial"] = _parse_vector(self["initial"], "initial")
            if self["target"] is not None:
                changes["target"] = _parse_vector(self["target"], "target")
            if changes:
                d = {"initial": sc.initial, "target": sc.target, **changes}
                sc = experiments.Scenario(d["initial"], d["target"], spec, sc.cost_kind)
        return sc

    def time(self, key: str = "tf") -> float:
        if self[key] is None:
            raise UsageError(f"--{key.replace('_', '-')} is required")
        tf = parse_time(self[key])
        if tf < 0:
            raise UsageError("times must be non-negative")
        return tf

    @property
    def catalog(self) -> list[str]:
        cat = self["catalog"]
        labels = cat if isinstance(cat, list) else [c.strip() for c in str(cat).split(",") if c.strip()]
        try:
            return [optimize.ProtocolStructure(c).label for c in labels]
        except ValueError as exc:
            raise UsageError(str(exc)) from exc

    @property
    def workers(self) -> int:
        return int(self["workers"]) if self["workers"] is not None else (os.cpu_count() or 1)

    def hash(self) -> str:
        payload = json.dumps({k: v for k, v in self.items() if k != "out"}, sort_keys=True,
                             default=str)
        return hashlib.sha256(payload.encode()).hexdigest()


def build_config(args: argparse.Namespace) -> Config:
    cfg = Config(DEFAULTS)
    if getattr(args, "config", None):
        data = _load_json_arg(args.config)
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    cfg["command"] = args.command
    return cfg


# -------------------------------------------------------------- outputs

def _write(path, text: str):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_text(text, encoding="utf-8")


def write_manifest(out_path, cfg: Config, outputs: list[str], extra: dict | None = None) -> Path:
    manifest = {
        "command": cfg["command"],
        "config": {k: v for k, v in cfg.items() if k != "command"},
        "config_hash": cfg.hash(),
        "version": __version__,
        "seed": cfg["seed"],
        "outputs": [Path(o).name for o in outputs],
    }
    if extra:
        manifest.update(extra)
    path = Path(str(out_path) + ".manifest.json")
    _write(path, canonical_json(manifest))
    return path


def _emit_json(cfg: Config, obj) -> None:
    text = canonical_json(obj)
    if cfg["out"]:
        _write(cfg["out"], text)
        write_manifest(cfg["out"], cfg, [cfg["out"]])
    else:
        sys.stdout.write(text)


def _schedule(cfg: Config):
    if cfg["schedule"] is None:
        raise UsageError("--schedule is required (inline JSON or a JSON file)")
    data = cfg["schedule"]
    if not isinstance(data, dict):
        data = _load_json_arg(data)
    if not isinstance(data, dict):
        raise UsageError("schedule must be a JSON object")
    data = dict(data)
    if "u" in data and "tf" not in data:
        data["tf"] = cfg.time()
    try:
        sched = schedule_from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"bad schedule: {exc}") from exc
    if cfg["tf"] is not None:
        tf = sched.tf
        if abs(tf - cfg.time()) > 1e-9 * max(1.0, tf):
            raise UsageError(f"schedule lasts {tf} but --tf is {cfg.time()}")
    return sched


# ------------------------------------------------------------- commands

def cmd_speed_limit(cfg: Config) -> int:
    states = cfg["states"]
    if states is None:
        psi_i, psi_t = psi_initial(), psi_target()
    else:
        parts = states if isinstance(states, list) else str(states).split(";")
        if len(parts) != 2:
            raise UsageError("--states needs two states separated by ';'")
        psi_i, psi_t = _parse_state(parts[0]), _parse_state(parts[1])
    t = geometry.quantum_speed_limit(psi_i, psi_t)
    print(f"T_min = {t:.12g} = {t / math.pi:.8f} pi")
    return EXIT_OK


def cmd_simulate(cfg: Config) -> int:
    sc = cfg.scenario
    sched = _schedule(cfg)
    dt = sched.tf / cfg["steps"] if sched.tf > 0 else None
    traj = evolve_state(sc.initial, sched, cfg.spec, dt)
    if cfg["out"]:
        write_trajectory_csv(cfg["out"], traj)
        write_manifest(cfg["out"], cfg, [cfg["out"]])
    else:
        write_trajectory_csv("/dev/stdout", traj)
    final = traj.final
    print(f"overlap = {float(np.dot(sc.target, final)):.12g}", file=sys.stderr)
    print(f"|rho(tf)| = {float(np.linalg.norm(final)):.12g}", file=sys.stderr)
    return EXIT_OK


def cmd_optimize(cfg: Config) -> int:
    sc = cfg.scenario
    tf = cfg.time()
    common = dict(rho0=sc.initial, target=sc.target, cost_kind=sc.cost_kind,
                  restarts=int(cfg["restarts"]), seed=int(cfg["seed"]),
                  steps=int(cfg["steps"]), tol_hc=float(cfg["tol_hc"]),
                  tol_phi=float(cfg["tol_phi"]))
    if cfg["structure"]:
        try:
            label = optimize.ProtocolStructure(cfg["structure"]).label
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        res = optimize.optimize_switching_times(label, tf, cfg.spec, **common)
    else:
        res = optimize.search_structures(tf, cfg.spec, cfg.catalog, **common)
    print(f"{res.structure} overlap={res.overlap:.10f} {res.report.summary()}", file=sys.stderr)
    _emit_json(cfg, res.to_dict())
    return EXIT_OK if res.report.passed else EXIT_VERIFY


def _sweep_outputs(cfg: Config, records, baseline=None) -> None:
    out = cfg["out"]
    if out:
        experiments.write_sweep_csv(out, records)
        outputs = [out]
        if baseline is not None:
            base = str(Path(out).with_suffix("")) + "_baseline.csv"
            experiments.write_sweep_csv(base, baseline)
            outputs.append(base)
        grid = parse_grid(cfg["grid"])
        write_manifest(out, cfg, outputs, {
            "spec": cfg.spec.to_dict(),
            "grid": [float(t) for t in grid],
            "catalog": cfg.catalog,
            "transitions": [list(t) for t in experiments.structure_transitions(records)],
        })
    for r in records:
        print(f"{r.tf / math.pi:.5f}pi overlap={r.overlap:.8f} {r.structure} "
              f"hc={r.hc_sign} {'PASS' if r.passed else 'FAIL'}", file=sys.stderr)


def _sweep_kwargs(cfg: Config) -> dict:
    return dict(restarts=int(cfg["restarts"]), seed=int(cfg["seed"]), workers=cfg.workers,
                refine_transitions=int(cfg["refine_transitions"]),
                refine_peak=bool(cfg["refine_peak"]), tol_hc=float(cfg["tol_hc"]),
                tol_phi=float(cfg["tol_phi"]))


def cmd_sweep(cfg: Config) -> int:
    grid = parse_grid(cfg["grid"])
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] <= 0:
        raise UsageError("grid must be positive and strictly ascending")
    records = experiments.sweep_tf(cfg.scenario, grid, cfg.catalog, **_sweep_kwargs(cfg))
    _sweep_outputs(cfg, records)
    return EXIT_OK if all(r.passed for r in records) else EXIT_VERIFY


def cmd_retain(cfg: Config) -> int:
    grid = parse_grid(cfg["grid"])
    if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] < 0:
        raise UsageError("grid must be non-negative and strictly ascending")
    spec = cfg.spec
    records = experiments.retention_scan(spec, grid, cfg.catalog, **_sweep_kwargs(cfg))
    baseline = experiments.zero_control_baseline(experiments.Scenario.retain(spec), grid)
    _sweep_outputs(cfg, records, baseline)
    return EXIT_OK if all(r.passed for r in records) else EXIT_VERIFY


def cmd_verify(cfg: Config) -> int:
    sc = cfg.scenario
    sched = _schedule(cfg)
    dt = sched.tf / cfg["steps"] if sched.tf > 0 else None
    report, traj, _ = pmp.verify_protocol(sc.initial, sc.target, sched, cfg.spec, sc.cost_kind,
                                          float(cfg["tol_hc"]), float(cfg["tol_phi"]), dt)
    print(report.summary(), file=sys.stderr)
    out = report.to_dict(samples=False)
    out["overlap"] = float(np.dot(sc.target, traj.final))
    out["passed"] = report.passed
    _emit_json(cfg, out)
    return EXIT_OK if report.passed else EXIT_VERIFY


def cmd_grad(cfg: Config) -> int:
    sc = cfg.scenario
    tf = cfg.time()
    n = int(cfg["n"])
    if n < 2:
        raise UsageError("--n must be at least 2")
    rate = None if cfg["rate"] is None else float(cfg["rate"])
    if rate is not None and rate <= 0:
        raise UsageError("--rate must be positive")
    res = optimize.gradient_descent_control(
        n, tf, cfg.spec, sc.cost_kind, rate=rate, max_iter=int(cfg["max_iter"]),
        stop_tol=float(cfg["stop_tol"]), rho0=sc.initial, target=sc.target,
        method=cfg["method"], tol_hc=float(cfg["tol_hc"]), tol_phi=float(cfg["tol_phi"]))
    print(f"cost={res.cost:.10g} overlap={res.overlap:.10f} iterations={res.evaluations}",
          file=sys.stderr)
    sched = Sampled(tf, res.controls)
    if cfg["out"]:
        out = Path(cfg["out"])
        csv_path = out.with_suffix(".csv")
        lines = ["t,u"] + [f"{t!r},{u!r}" for t, u in zip(sched.cell_midpoints().tolist(),
                                                          res.controls.tolist())]
        _write(csv_path, "\n".join(lines) + "\n")
        json_path = out.with_suffix(".json")
        _write(json_path, canonical_json(res.to_dict()))
        write_manifest(out, cfg, [str(csv_path), str(json_path)])
    else:
        sys.stdout.write(canonical_json(res.to_dict()))
    return EXIT_OK


def cmd_singular_arc(cfg: Config) -> int:
    spec = cfg.spec
    u_closed = geometry.singular_control_closed(spec.xi)
    print(f"u_sing = {u_closed:.12g}", file=sys.stderr)
    thetas = np.linspace(0.0, math.pi, int(cfg["thetas"]))
    pts = geometry.singular_arc_points(spec.xi, thetas)
    closed = SystemSpec(xi=spec.xi, channel="none", gamma=0.0, u_bound=spec.u_bound)
    lines = ["theta,phi,rx,ry,rz,u_open"]
    for th, ph in pts:
        r = geometry.bloch_from_sphere(geometry.SphereCoord(th, ph))
        try:
            u = geometry.singular_control_open(r, closed).u_raw
        except geometry.SingularControlUndefined:
            u = float("nan")
        lines.append(",".join(repr(float(x)) for x in (th, ph, *r, u)))
    text = "\n".join(lines) + "\n"
    if cfg["out"]:
        _write(cfg["out"], text)
        write_manifest(cfg["out"], cfg, [cfg["out"]], {"u_sing": u_closed})
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "speed-limit": cmd_speed_limit,
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
    "retain": cmd_retain,
    "verify": cmd_verify,
    "grad": cmd_grad,
    "singular-arc": cmd_singular_arc,
}


def make_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("system")
    g.add_argument("--config", help="JSON config file; explicit flags override it")
    g.add_argument("--xi", type=float)
    g.add_argument("--channel", choices=["none", "uniform", "x", "y", "z"])
    g.add_argument("--gamma", type=float, help="dissipation rate Gamma")
    g.add_argument("--u-bound", dest="u_bound", type=float)
    g.add_argument("--scenario", choices=["prepare", "retain", "custom"])
    g.add_argument("--initial", help="initial Bloch vector x,y,z")
    g.add_argument("--target", help="target Bloch vector x,y,z")
    g.add_argument("--cost", choices=["overlap", "frobenius"])
    g.add_argument("--tf", help="final time, e.g. 0.42pi")
    g.add_argument("--grid", help="start:stop:n or comma list, e.g. 0.05pi:2pi:60")
    g.add_argument("--out", help="output path")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--tol-hc", dest="tol_hc", type=float)
    g.add_argument("--tol-phi", dest="tol_phi", type=float)
    g.add_argument("--steps", type=int, help="integrator steps over [0, tf]")
    g.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="qubitpmp", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("speed-limit", parents=[common], help="minimum time between two pure states")
    p.add_argument("--states", help="'c0,c1;c0,c1' complex amplitudes of initial and target")

    p = sub.add_parser("simulate", parents=[common], help="propagate a schedule, write t,u,rx,ry,rz")
    p.add_argument("--schedule", help="schedule JSON or path")

    for name, text in (("optimize", "best switching times for a structure or catalog"),
                       ("sweep", "optimized overlap over a grid of final times"),
                       ("retain", "state-retention sweep with zero-control baseline")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--catalog", help="comma-separated structures")
        p.add_argument("--restarts", type=int)
        if name == "optimize":
            p.add_argument("--structure")
        else:
            p.add_argument("--refine-peak", dest="refine_peak", action="store_true", default=None)
            p.add_argument("--refine-transitions", dest="refine_transitions", type=int)

    p = sub.add_parser("verify", parents=[common], help="check PMP conditions for a schedule")
    p.add_argument("--schedule", help="schedule JSON or path")

    p = sub.add_parser("grad", parents=[common], help="gradient descent on a sampled control")
    p.add_argument("--n", type=int, help="number of control cells")
    p.add_argument("--rate", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--stop-tol", dest="stop_tol", type=float)
    p.add_argument("--method", choices=["gradient", "cg"])

    p = sub.add_parser("singular-arc", parents=[common], help="closed-system singular arc and control")
    p.add_argument("--thetas", type=int, help="number of polar angles sampled")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or an argparse usage error
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        cfg = build_config(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"qubitpmp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SingularControlError, optimize.OptimizationError) as exc:
        print(f"qubitpmp {args.command}: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
