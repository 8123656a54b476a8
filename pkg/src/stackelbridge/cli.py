"""Command-line runner: stackelbridge <command> [options].

Settings are resolved as: command-line flag > INI config file > benchmark preset.
The config file is plain INI, e.g.::

    [run]
    problem = braess
    method = projection
    T = 0, 1, 2
    [tntp]
    net = SiouxFalls_net.tntp
    trips = SiouxFalls_trips.tntp
    k_per_od = 3
    [bounds]
    gamma = 1
    L_y = 1
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import benchmarks
from .algorithms import (COURNOT, MONOPOLY, SolverOptions, adaptive_bracket, bound_estimate, bracket,
                         multi_start, solve_cournot, solve_monopoly)
from .core import BoundParams, contraction_factor
from .dynamics import DynamicsConfig
from .errors import ConvergenceError, StackelbridgeError

log = logging.getLogger("stackelbridge")

CSV_HEADER = ["method", "T", "converged", "iterations", "wall_time_s", "objective", "gap"]
BOUNDS_HEADER = ["T", "eta", "cournot_bound", "monopoly_bound"]
COMMANDS = ["solve-cournot", "solve-monopoly", "bracket", "adaptive", "multistart", "bounds", "bench"]
PROBLEMS = ["duopoly", "quad_exp1", "braess", "tntp"]
BOUND_KEYS = ["gamma", "L_x", "L_y", "G_x", "G_y", "G_xy", "G_yy", "H_x", "H_xy", "H_yy", "d_max", "r"]


class ConfigError(StackelbridgeError, ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    problem: str = "duopoly"
    method: str = "projection"
    r: Optional[float] = None
    T: list = field(default_factory=list)
    alpha: Optional[float] = None
    beta: Optional[float] = None
    tol: float = 1e-8
    max_iter: int = 50_000
    seed: int = 0
    format: str = "csv"
    out: Optional[str] = None
    jobs: int = 1
    n_starts: int = 20
    which: str = MONOPOLY
    gap_tol: float = 1e-3
    net: Optional[str] = None
    trips: Optional[str] = None
    k_per_od: int = 5
    expandable: Optional[list] = None
    b_cost: Optional[list] = None
    gamma_weight: float = 1.0
    bounds: dict = field(default_factory=dict)
    G_l: Optional[float] = None

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {PROBLEMS}")
        if self.method not in ("projection", "mirror"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.format not in ("csv", "json"):
            raise ConfigError(f"unknown format {self.format!r}")
        if not self.T:
            raise ConfigError("T list is empty")
        if any(t < 0 for t in self.T):
            raise ConfigError("T values must be >= 0")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if self.problem == "tntp" and self.command != "bounds" and not (self.net and self.trips):
            raise ConfigError("problem 'tntp' needs both a .net and a .trips file")


def parse_T(text):
    """'0,1,2', '0-4' or a mix like '0-2, 5, 10'."""
    out = []
    for part in str(text).replace(" ", "").split(","):
        if not part:
            continue
        try:
            if "-" in part[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
        except ValueError:
            raise ConfigError(f"cannot read T value {part!r}") from None
    return out


def _int_list(text):
    try:
        return [int(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in str(text).replace(" ", "").split(",") if v]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


_CASTS = {
    "r": float, "alpha": float, "beta": float, "tol": float, "max_iter": int, "seed": int, "jobs": int,
    "n_starts": int, "gap_tol": float, "k_per_od": int, "gamma_weight": float, "G_l": float,
    "T": parse_T, "expandable": _int_list, "b_cost": _float_list,
}


def _cast(key, value):
    try:
        return _CASTS.get(key, str)(value)
    except ConfigError:
        raise
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None


def read_config_file(path):
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep case of L_x etc.
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"config {path}: {str(exc).splitlines()[0]}") from None
    values = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            norm = key.replace("-", "_")
            if section == "bounds":
                if norm not in BOUND_KEYS:
                    raise ConfigError(f"unknown bound constant {key!r}")
                values.setdefault("bounds", {})[norm] = _cast("r", raw)
            elif section in ("run", "tntp", "solver"):
                if norm not in RunConfig.__dataclass_fields__ or norm == "bounds":
                    raise ConfigError(f"unknown config key {key!r} in [{section}]")
                values[norm] = _cast(norm, raw)
            else:
                raise ConfigError(f"unknown config section [{section}]")
    return values


class _Parser(argparse.ArgumentParser):
    """Raise instead of exiting so errors share the single-line diagnostic path."""

    def error(self, message):
        raise ConfigError(message)


def build_parser():
    parser = _Parser(prog="stackelbridge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--problem", choices=PROBLEMS)
        p.add_argument("--method", choices=["projection", "mirror"])
        p.add_argument("--r", type=float)
        p.add_argument("--T", type=parse_T, help="e.g. 0-4 or 0,1,5")
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", dest="max_iter", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--format", choices=["csv", "json"])
        p.add_argument("--out")
        p.add_argument("--jobs", type=int)
        p.add_argument("--net")
        p.add_argument("--trips")
        p.add_argument("--k-per-od", dest="k_per_od", type=int)
        p.add_argument("--expandable", type=_int_list, help="0-based arc indices")
        p.add_argument("--b-cost", dest="b_cost", type=_float_list)
        p.add_argument("--gamma-weight", dest="gamma_weight", type=float)
        if name == "multistart":
            p.add_argument("--n-starts", dest="n_starts", type=int)
            p.add_argument("--which", choices=[COURNOT, MONOPOLY])
        if name == "adaptive":
            p.add_argument("--gap-tol", dest="gap_tol", type=float)
        if name == "bounds":
            p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                           help=f"bound constant, KEY in {BOUND_KEYS}")
            p.add_argument("--G-l", dest="G_l", type=float)
    return parser


def resolve_config(argv) -> RunConfig:
    args = build_parser().parse_args(argv)
    values = read_config_file(args.config) if args.config else {}
    for key, val in vars(args).items():
        if key in ("config", "param") or val is None:
            continue
        values[key] = val
    for item in getattr(args, "param", []) or []:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        if k not in BOUND_KEYS:
            raise ConfigError(f"unknown bound constant {k!r}")
        values.setdefault("bounds", {})[k] = _cast("r", v)
    cfg = RunConfig(**values)
    preset = benchmarks.PRESETS[cfg.problem]
    if cfg.r is None:
        if cfg.method not in preset["r"]:
            raise ConfigError(f"no default r for {cfg.method} dynamics on {cfg.problem}; pass --r")
        cfg.r = preset["r"][cfg.method]
    if not cfg.T:
        cfg.T = list(preset["T"]) if cfg.command in ("bench", "adaptive") else [preset["T"][0]]
    cfg.alpha = preset["alpha"] if cfg.alpha is None else cfg.alpha
    cfg.beta = preset["beta"] if cfg.beta is None else cfg.beta
    cfg.validate()
    return cfg


def build_problem(cfg: RunConfig):
    if cfg.problem == "tntp":
        from .tntp import load_instance

        inst = load_instance(cfg.net, cfg.trips, k_per_od=cfg.k_per_od, expandable=cfg.expandable,
                             b_cost=cfg.b_cost, gamma_weight=cfg.gamma_weight)
        return benchmarks.make_network_design(inst)
    return benchmarks.build(cfg.problem)


@dataclass
class Row:
    report: object
    gap: Optional[float] = None


def _fmt(v):
    return f"{v:.6g}"


def emit_report(rows, fmt, sink, config_echo=None):
    """Write report rows as CSV (6 significant digits) or JSON (full precision)."""
    if not rows:
        raise ValueError("no reports to emit")
    if fmt == "csv":
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            rep = row.report
            w.writerow([rep.role, rep.T, str(rep.converged).lower(), rep.iterations, _fmt(rep.wall_time_s),
                        _fmt(rep.objective), "" if row.gap is None else _fmt(row.gap)])
    elif fmt == "json":
        payload = {
            "config": config_echo or {},
            "reports": [dict(row.report.to_dict(), gap=row.gap) for row in rows],
        }
        json.dump(payload, sink, indent=2, allow_nan=True)
        sink.write("\n")
    else:
        raise ValueError(f"unknown format {fmt!r}")


def emit_bounds(rows, fmt, sink, config_echo=None):
    if fmt == "csv":
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(BOUNDS_HEADER)
        for r in rows:
            w.writerow([r["T"]] + [_fmt(r[k]) for k in BOUNDS_HEADER[1:]])
    else:
        json.dump({"config": config_echo or {}, "bounds": rows}, sink, indent=2)
        sink.write("\n")


def _map(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def execute(cfg: RunConfig):
    """Run the configured command; returns (rows, any_failed)."""
    if cfg.command == "bounds":
        if not cfg.bounds and cfg.problem == "duopoly":
            # certified constants for the rescaled duopoly; matches the preset step
            params = benchmarks.duopoly_bound_params(cfg.r)
        else:
            missing = [k for k in ("gamma", "r") if k not in cfg.bounds]
            if missing:
                raise ConfigError(f"bounds needs {missing} via [bounds] or --param KEY=VALUE (others default to 0)")
            params = BoundParams(**{**{k: 0.0 for k in BOUND_KEYS}, **cfg.bounds})
        eta = contraction_factor(params)
        rows = []
        for T in cfg.T:
            c, m = bound_estimate(params, T, G_l=cfg.G_l)
            rows.append({"T": T, "eta": eta, "cournot_bound": c, "monopoly_bound": m})
        return rows, False

    problem = build_problem(cfg)
    opts = SolverOptions(alpha=cfg.alpha, beta=cfg.beta, tol=cfg.tol, max_iter=cfg.max_iter, seed=cfg.seed)
    base = DynamicsConfig(cfg.method, cfg.r, cfg.T[0])
    x0, y0 = benchmarks.default_start(problem)
    rows = []
    if cfg.command == "adaptive":
        res = adaptive_bracket(problem, base, opts, x0, y0, cfg.T, cfg.gap_tol)
        for stage in res.history:
            rows += [Row(stage.upper, stage.gap), Row(stage.lower, stage.gap)]
        return rows, not res.converged or any(not r.report.converged for r in rows)
    if cfg.command == "multistart":
        for T in cfg.T:
            ms = multi_start(problem, base.with_T(T), opts, cfg.n_starts, cfg.seed, cfg.which, jobs=cfg.jobs)
            rows += [Row(r) for r in ms.reports]
        return rows, any(not r.report.converged for r in rows)

    def one(T):
        dyn = base.with_T(T)
        if cfg.command == "solve-cournot":
            return [Row(solve_cournot(problem, dyn, opts, x0, y0))]
        if cfg.command == "solve-monopoly":
            return [Row(solve_monopoly(problem, dyn, opts, x0, y0))]
        b = bracket(problem, dyn, opts, x0, y0)
        return [Row(b.upper, b.gap), Row(b.lower, b.gap)]

    for chunk in _map(one, cfg.T, cfg.jobs):
        rows += chunk
    return rows, any(not r.report.converged for r in rows)


def _setup_logging():
    level = os.environ.get("STACKELBRIDGE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(kind, exc, code):
    msg = " ".join(str(exc).split())
    print(f"stackelbridge: {kind}: {type(exc).__name__}: {msg}", file=sys.stderr)
    return code


def main(argv=None):
    _setup_logging()
    try:
        cfg = resolve_config(sys.argv[1:] if argv is None else argv)
        rows, failed = execute(cfg)
    except ConvergenceError as exc:
        return _fail("convergence", exc, 2)
    except (StackelbridgeError, ValueError, OSError) as exc:
        return _fail("config", exc, 1)
    echo = {k: v for k, v in asdict(cfg).items() if v not in (None, {}, [])}
    buf = io.StringIO()
    if cfg.command == "bounds":
        emit_bounds(rows, cfg.format, buf, echo)
    else:
        emit_report(rows, cfg.format, buf, echo)
    try:
        if cfg.out:
            with open(cfg.out, "w", newline="") as fh:
                fh.write(buf.getvalue())
        else:
            sys.stdout.write(buf.getvalue())
    except OSError as exc:
        return _fail("io", exc, 1)
    if failed:
        print("stackelbridge: convergence: at least one run did not converge", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
