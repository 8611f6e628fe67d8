"""Command-line benchmark harness.

Subcommands:

    simulate       run one scenario file and write CSV / event log / plot data
    table1         mode counts N(theta) of the backstepping design
    compare        run two scenarios and report peak norm, settle time, final estimate
    dump-defaults  print or write the default scenario file

Exit codes: 0 success, 2 unreadable or malformed configuration, 3 invalid
values or mismatched comparison, 4 blow-up (partial artifacts are written).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import math
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .backstepping import BacksteppingDesign, DesignParams, GainSchedule, modal_gains
from .identifier import Estimates
from .passive import ScenarioMismatch, compare_runs, run_passive
from .plant import BlowUpError, PlantParams, SolverConfig, write_trajectory_csv
from .reduced_model import ReducedModelDesign
from .supervisor import RunResult, TriggerConfig, run_adaptive, run_nominal

log = logging.getLogger(__name__)

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_BLOWUP = 0, 2, 3, 4

MODES = ("open_loop", "nominal_full_kernel", "nominal_truncated", "adaptive_regulation",
         "adaptive_regulation_known_c", "adaptive_passive")
BACKENDS = ("backstepping", "reduced_model")

TABLE1_THETAS = (0.1, 3.0, 5.0, 6.0, 7.0, 8.0, 9.0, math.pi**2, 10.0, 11.0, 12.0)


class ConfigError(ValueError):
    """Configuration text that cannot be read (exit status 2)."""


def sine_cubic(x):
    x = np.asarray(x, dtype=float)
    return math.sqrt(2.0) * np.sin(math.pi * x) + x * x - x**3


@dataclass(frozen=True)
class Scenario:
    truth: PlantParams = PlantParams(1.0, 11.0, 1.0)
    initial: str = "sine_cubic"
    theta_hat0: float = 0.1
    c_hat0: float = 1.0
    trigger: TriggerConfig = TriggerConfig()
    design: DesignParams = DesignParams()
    backend: str = "backstepping"
    solver: SolverConfig = SolverConfig()
    mode: str = "adaptive_regulation_known_c"
    horizon: float = 3.0
    stride: int = 10
    n_ident: int = 5
    gain_gamma: float = 100.0
    N_override: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {', '.join(MODES)}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {', '.join(BACKENDS)}")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not self.c_hat0 > 0:
            raise ValueError("c_hat0 must be positive")
        if not self.gain_gamma > 0:
            raise ValueError("gain_gamma must be positive")
        if self.n_ident < 1 or self.n_ident > self.solver.n_max:
            raise ValueError("n_ident must lie in 1..n_max")
        if self.N_override < 0 or self.N_override > self.solver.n_max:
            raise ValueError("N_override must lie in 0..n_max")
        if not (self.initial in ("sine_cubic", "zero") or self.initial.startswith("csv:")):
            raise ValueError("initial must be sine_cubic, zero or csv:PATH")


# Config text ------------------------------------------------------------------

def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def scenario_to_ini(sc: Scenario) -> str:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["plant"] = {k: _fmt(v) for k, v in asdict(sc.truth).items()}
    cp["initial"] = {"profile": sc.initial, "theta_hat0": _fmt(sc.theta_hat0),
                     "c_hat0": _fmt(sc.c_hat0)}
    cp["trigger"] = {k: _fmt(v) for k, v in asdict(sc.trigger).items()}
    cp["design"] = {"backend": sc.backend, **{k: _fmt(v) for k, v in asdict(sc.design).items()}}
    cp["solver"] = {k: _fmt(v) for k, v in asdict(sc.solver).items()}
    cp["run"] = {"mode": sc.mode, "horizon": _fmt(sc.horizon), "stride": str(sc.stride),
                 "n_ident": str(sc.n_ident), "gain_gamma": _fmt(sc.gain_gamma),
                 "N_override": str(sc.N_override)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _section(cp, name, cls, base):
    """Build ``cls`` from section ``name``, starting from the defaults in ``base``."""
    values = asdict(base)
    if cp.has_section(name):
        for key, raw in cp.items(name):
            if key not in values:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            values[key] = _convert(raw, values[key], f"[{name}] {key}")
    return cls(**values)


def _convert(raw: str, default, where: str):
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot read {raw!r}") from exc
    return raw.strip()


def scenario_from_ini(text: str) -> Scenario:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"plant", "initial", "trigger", "design", "solver", "run"}
    extra = set(cp.sections()) - known
    if extra:
        raise ConfigError(f"unknown sections: {', '.join(sorted(extra))}")
    base = Scenario()
    truth = _section(cp, "plant", PlantParams, base.truth)
    trigger = _section(cp, "trigger", TriggerConfig, base.trigger)
    solver = _section(cp, "solver", SolverConfig, base.solver)
    design_items = dict(cp.items("design")) if cp.has_section("design") else {}
    backend = design_items.pop("backend", base.backend).strip()
    design_cp = configparser.ConfigParser()
    design_cp.optionxform = str
    design_cp["design"] = design_items
    design = _section(design_cp, "design", DesignParams, base.design)
    top = {"initial": base.initial, "theta_hat0": base.theta_hat0, "c_hat0": base.c_hat0,
           "mode": base.mode, "horizon": base.horizon, "stride": base.stride,
           "n_ident": base.n_ident, "gain_gamma": base.gain_gamma,
           "N_override": base.N_override}
    mapping = {"initial": {"profile": "initial", "theta_hat0": "theta_hat0", "c_hat0": "c_hat0"},
               "run": {k: k for k in ("mode", "horizon", "stride", "n_ident", "gain_gamma",
                                      "N_override")}}
    for sect, keys in mapping.items():
        if cp.has_section(sect):
            for key, raw in cp.items(sect):
                if key not in keys:
                    raise ConfigError(f"unknown key {key!r} in [{sect}]")
                name = keys[key]
                top[name] = _convert(raw, top[name], f"[{sect}] {key}")
    return Scenario(truth=truth, trigger=trigger, solver=solver, design=design,
                    backend=backend, **top)


def load_scenario(path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return scenario_from_ini(text)


# Running ----------------------------------------------------------------------

def initial_profile(sc: Scenario) -> np.ndarray:
    x = np.linspace(0.0, 1.0, sc.solver.n_points)
    if sc.initial == "sine_cubic":
        return sine_cubic(x)
    if sc.initial == "zero":
        return np.zeros_like(x)
    path = sc.initial[4:]
    try:
        data = np.loadtxt(path, delimiter=",", ndmin=1)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read initial profile {path}: {exc}") from exc
    if data.ndim == 2 and data.shape[1] == 2:
        # (x, u) pairs: interpolate onto the solver grid
        return np.interp(x, data[:, 0], data[:, 1])
    data = data.ravel()
    if data.size != x.size:
        raise ValueError(f"initial profile has {data.size} values, grid has {x.size} nodes")
    return data


def design_for(sc: Scenario):
    if sc.backend == "reduced_model":
        return ReducedModelDesign(p=sc.truth.p, n_total=sc.solver.n_max)
    return BacksteppingDesign(sc.design, sc.truth.p)


def run_scenario(sc: Scenario) -> RunResult:
    u0 = initial_profile(sc)
    truth, solver = sc.truth, sc.solver
    if sc.mode == "open_loop":
        return run_nominal(truth, u0, solver, sc.horizon, feedback="open_loop")
    if sc.mode == "nominal_full_kernel":
        return run_nominal(truth, u0, solver, sc.horizon, feedback="full_kernel",
                           design_params=sc.design)
    if sc.mode == "nominal_truncated":
        schedule = design_for(sc)(truth.theta)
        if sc.N_override and sc.backend == "backstepping":
            k = modal_gains(truth.theta, sc.N_override, sc.design, truth.p)
            schedule = GainSchedule(truth.theta, sc.N_override, tuple(k), schedule.R,
                                    schedule.omega)
        return run_nominal(truth, u0, solver, sc.horizon, feedback="truncated",
                           schedule=schedule)
    if sc.mode in ("adaptive_regulation", "adaptive_regulation_known_c"):
        known = sc.mode.endswith("known_c")
        return run_adaptive(truth, u0, Estimates(sc.theta_hat0, sc.c_hat0), sc.trigger,
                            design_for(sc), solver, sc.horizon, known_c=known,
                            n_ident=sc.n_ident)
    return run_passive(truth, u0, sc.gain_gamma, sc.theta_hat0, solver=solver,
                       horizon=sc.horizon, design_params=sc.design)


PLOT_SCRIPT = '''"""Plot the norm and estimate series written next to this script."""
import csv
import sys
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

here = Path(__file__).resolve().parent
with open(here / "{data}") as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t"]) for r in rows]
series = [k for k in rows[0] if k != "t"]
fig, axes = plt.subplots(len(series), 1, sharex=True, figsize=(7, 2.6 * len(series)))
axes = axes if len(series) > 1 else [axes]
for ax, key in zip(axes, series):
    ax.plot(t, [float(r[key]) for r in rows])
    ax.set_ylabel(key)
axes[-1].set_xlabel("t")
fig.tight_layout()
fig.savefig(here / (sys.argv[1] if len(sys.argv) > 1 else "{png}"))
'''


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if not isinstance(v, str) else v for v in row])


def _stride_index(n: int, stride: int) -> np.ndarray:
    idx = np.arange(0, n, stride)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def write_artifacts(out: Path, sc: Scenario, result: RunResult, prefix: str = ""):
    out.mkdir(parents=True, exist_ok=True)
    extra = {}
    if sc.mode.startswith("adaptive"):
        extra = {"theta_hat": result.theta_hat, "c_hat": result.c_hat}
    write_trajectory_csv(out / f"{prefix}trajectory.csv", result.trace, sc.stride, extra)
    if result.log is not None:
        result.log.write(out / f"{prefix}events.log")
    idx = _stride_index(len(result.trace), sc.stride)
    _write_csv(out / f"{prefix}plot_data.csv", ["t", "norm", "theta_hat"],
               zip(result.times[idx], result.norms[idx], result.theta_hat[idx]))
    (out / f"{prefix}plot.py").write_text(
        PLOT_SCRIPT.format(data=f"{prefix}plot_data.csv", png=f"{prefix}plot.png"))


def apply_overrides(sc: Scenario, args) -> Scenario:
    solver = sc.solver
    if getattr(args, "grid", None) is not None:
        solver = replace(solver, n_points=args.grid)
    if getattr(args, "dt", None) is not None:
        solver = replace(solver, dt=args.dt)
    sc = replace(sc, solver=solver)
    if getattr(args, "stride", None) is not None:
        sc = replace(sc, stride=args.stride)
    return sc


# Subcommands ------------------------------------------------------------------

def cmd_simulate(args) -> int:
    sc = apply_overrides(load_scenario(args.config), args)
    out = Path(args.out)
    try:
        result = run_scenario(sc)
    except BlowUpError as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        if exc.partial is not None:
            write_artifacts(out, sc, exc.partial)
        return EXIT_BLOWUP
    write_artifacts(out, sc, result)
    print(f"wrote {out}")
    return EXIT_OK


def table1_rows(design: DesignParams, p: float = 1.0, extra=()):
    bd = BacksteppingDesign(design, p)
    rows = []
    for theta in list(TABLE1_THETAS) + [float(v) for v in extra]:
        s = bd(theta)
        rows.append((theta, s.N, s.R))
    return rows


def cmd_table1(args) -> int:
    design = DesignParams(beta=args.beta, sigma=args.sigma, B=args.B, panels=args.panels)
    rows = table1_rows(design, args.p, args.theta or ())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "N", "R"])
    for theta, N, R in rows:
        w.writerow([repr(float(theta)), N, repr(float(R))])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "table1.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _resample(result: RunResult, grid: np.ndarray, series: np.ndarray) -> np.ndarray:
    # at duplicate times (control switches) keep the post-switch sample
    t = result.times
    keep = np.append(t[1:] != t[:-1], True)
    return np.interp(grid, t[keep], np.asarray(series)[keep])


def cmd_compare(args) -> int:
    a = apply_overrides(load_scenario(args.config_a), args)
    b = apply_overrides(load_scenario(args.config_b), args)
    if a.truth != b.truth or a.initial != b.initial or a.solver != b.solver:
        print("scenarios differ in plant, initial condition or solver", file=sys.stderr)
        return EXIT_INVALID
    out = Path(args.out)
    results = []
    for sc, tag in ((a, "a_"), (b, "b_")):
        try:
            res = run_scenario(sc)
        except BlowUpError as exc:
            print(f"blow-up in scenario {tag[0]}: {exc}", file=sys.stderr)
            if exc.partial is not None:
                write_artifacts(out, sc, exc.partial, tag)
            return EXIT_BLOWUP
        write_artifacts(out, sc, res, tag)
        results.append(res)
    try:
        report = compare_runs(results[0], results[1], labels=(a.mode, b.mode))
    except ScenarioMismatch as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_INVALID
    (out / "compare_report.txt").write_text(report.to_text())
    horizon = min(a.horizon, b.horizon)
    step = a.solver.dt * a.stride
    grid = np.arange(0.0, horizon + 0.5 * step, step)
    grid = grid[grid <= horizon + 1e-12]
    cols = [grid]
    for res in results:
        cols += [_resample(res, grid, res.norms), _resample(res, grid, res.theta_hat)]
    _write_csv(out / "compare_plot_data.csv",
               ["t", "norm_a", "theta_hat_a", "norm_b", "theta_hat_b"], zip(*cols))
    (out / "compare_plot.py").write_text(
        PLOT_SCRIPT.format(data="compare_plot_data.csv", png="compare_plot.png"))
    sys.stdout.write(report.to_text())
    return EXIT_OK


def cmd_dump_defaults(args) -> int:
    text = scenario_to_ini(Scenario())
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtadapt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--stride", type=int, help="record every K-th sample")
        p.add_argument("--grid", type=int, help="number of spatial grid points")
        p.add_argument("--dt", type=float, help="time step")

    p = sub.add_parser("simulate", help="run one scenario")
    p.add_argument("--config", required=True, help="scenario file")
    overrides(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("table1", help="mode counts of the backstepping design")
    p.add_argument("--theta", type=float, action="append", help="extra theta value")
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--B", type=float, default=0.1)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--panels", type=int, default=10_000)
    p.add_argument("--out", default=None, help="also write table1.csv here")
    p.set_defaults(func=cmd_table1)

    p = sub.add_parser("compare", help="run and compare two scenarios")
    p.add_argument("config_a")
    p.add_argument("config_b")
    overrides(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("dump-defaults", help="print the default scenario file")
    p.add_argument("--out", default=None, help="write to this file instead of stdout")
    p.set_defaults(func=cmd_dump_defaults)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (ValueError, TypeError) as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
