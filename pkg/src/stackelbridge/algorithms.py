"""T-step Cournot and monopoly solvers, bracketing, adaptive warm starts and multi-start.

Cournot (upper bound): the leader descends l^(T)(x, y) in x while the
follower moves y <- h^(max(T,1))(x, y).  Monopoly (lower bound): x and the
follower seed y are optimized jointly on l^(T).
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import BoundParams, contraction_factor
from .dynamics import DynamicsConfig, grad_lT, unroll
from .errors import NormalizationError, StackelbridgeError
from .vi import VISolveOptions, solve_vi, vi_residual

log = logging.getLogger(__name__)

COURNOT = "cournot"
MONOPOLY = "monopoly"


@dataclass(frozen=True)
class SolverOptions:
    alpha: float = 0.05
    beta: float = 0.05
    tol: float = 1e-8
    max_iter: int = 50_000
    seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError("step sizes must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class SolveReport:
    x_final: np.ndarray
    y_final: np.ndarray
    objective: float
    iterations: int
    wall_time_s: float
    converged: bool
    role: str
    T: int
    method: str = "projection"
    displacement: float = np.nan
    # follower state after T steps from the returned seed (monopoly) or y_final itself (cournot)
    y_response: Optional[np.ndarray] = None
    refined: bool = False
    trace: list = field(default_factory=list)

    def to_dict(self):
        out = {
            "role": self.role,
            "method": self.method,
            "T": self.T,
            "converged": self.converged,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
            "objective": self.objective,
            "displacement": self.displacement,
            "refined": self.refined,
            "x_final": self.x_final.tolist(),
            "y_final": self.y_final.tolist(),
        }
        if self.y_response is not None:
            out["y_response"] = self.y_response.tolist()
        if self.trace:
            out["trace"] = [list(t) for t in self.trace]
        return out


def _box_bounds(feasible_set):
    box = feasible_set.as_box() if hasattr(feasible_set, "as_box") else feasible_set
    lo, hi = getattr(box, "lower", None), getattr(box, "upper", None)
    if lo is None:
        if type(feasible_set).__name__ != "FullSpace":
            raise TypeError("norm prox needs a box-shaped leader set")
        lo, hi = np.full(feasible_set.dim, -np.inf), np.full(feasible_set.dim, np.inf)
    return lo, hi


def prox_norm_box(z, t, feasible_set, iters=200):
    """argmin_{x in B} 0.5*||x - z||^2 + t*||x||_2 for a box B containing 0.

    Zero is optimal iff the projection of z on the tangent cone of B at 0
    has norm <= t.  Otherwise x = clip(z * rho / (rho + t)) where rho > 0
    solves rho = ||x(rho)||, found by bisection.
    """
    lo, hi = _box_bounds(feasible_set)
    if np.any(lo > 0) or np.any(hi < 0):
        raise ValueError("box must contain the origin")
    z = np.asarray(z, dtype=float)
    tangent = np.clip(z, np.where(lo < 0, -np.inf, 0.0), np.where(hi > 0, np.inf, 0.0))
    if np.linalg.norm(tangent) <= t:
        return np.zeros_like(z)

    def resid(rho):
        return np.linalg.norm(np.clip(z * (rho / (rho + t)), lo, hi)) - rho

    a, b = 0.0, float(np.linalg.norm(np.clip(z, lo, hi)))
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if resid(mid) > 0:
            a = mid
        else:
            b = mid
        if b - a <= 1e-15 * max(b, 1.0):
            break
    rho = 0.5 * (a + b)
    return np.clip(z * (rho / (rho + t)), lo, hi)


def leader_step(problem, x, grad_x, alpha):
    """Projected gradient step on x; a declared lam*||x|| term goes through its prox."""
    lam = problem.norm_weight_x
    if lam == 0:
        return problem.set_x.project(x - alpha * grad_x)
    nx = np.linalg.norm(x)
    smooth = grad_x - (lam * x / nx if nx > 0 else 0.0)
    return prox_norm_box(x - alpha * smooth, alpha * lam, problem.set_x)


def _as_start(problem, x0, y0):
    x = problem.set_x.project(np.asarray(x0, dtype=float))
    y = problem.set_y.project(np.asarray(y0, dtype=float))
    return x, y


def solve_cournot(problem, config: DynamicsConfig, opts: SolverOptions, x0, y0) -> SolveReport:
    t0 = time.monotonic()
    x, y = _as_start(problem, x0, y0)
    T = config.T
    follower_T = max(T, 1)
    trace = []
    converged = False
    disp = np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        try:
            g = grad_lT(problem, config, x, y)
            x_new = leader_step(problem, x, g.grad_x, opts.alpha)
            y_new, _ = unroll(problem, config, x, y, T=follower_T)
        except (StackelbridgeError, FloatingPointError) as exc:
            log.warning("cournot iteration failed at step %d: %s", it, exc)
            break
        disp = float(np.linalg.norm(x_new - x) + np.linalg.norm(y_new - y))
        if not math.isfinite(disp):
            log.warning("cournot iteration diverged at step %d", it)
            break
        x, y = x_new, y_new
        if opts.record_trace:
            trace.append((g.value, disp))
        if disp <= opts.tol and vi_residual(problem, config, x, y) <= 100 * opts.tol:
            converged = True
            break
    value = grad_lT(problem, config, x, y).value
    return SolveReport(x, y, value, it, time.monotonic() - t0, converged, COURNOT, T,
                       config.kind, disp, y.copy(), trace=trace)


def solve_monopoly(problem, config: DynamicsConfig, opts: SolverOptions, x0, y0) -> SolveReport:
    t0 = time.monotonic()
    x, y = _as_start(problem, x0, y0)
    trace = []
    converged = False
    disp = np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        try:
            g = grad_lT(problem, config, x, y)
            x_new = leader_step(problem, x, g.grad_x, opts.alpha)
            y_new = problem.set_y.project(y - opts.beta * g.grad_y)
        except (StackelbridgeError, FloatingPointError) as exc:
            log.warning("monopoly iteration failed at step %d: %s", it, exc)
            break
        disp = float(np.linalg.norm(x_new - x) + np.linalg.norm(y_new - y))
        if not math.isfinite(disp):
            log.warning("monopoly iteration diverged at step %d", it)
            break
        x, y = x_new, y_new
        if opts.record_trace:
            trace.append((g.value, disp))
        if disp <= opts.tol:
            converged = True
            break
    g = grad_lT(problem, config, x, y)
    return SolveReport(x, y, g.value, it, time.monotonic() - t0, converged, MONOPOLY, config.T,
                       config.kind, disp, g.y_T, trace=trace)


@dataclass
class BracketResult:
    upper: SolveReport
    lower: SolveReport
    gap: float

    def __iter__(self):
        return iter((self.upper, self.lower, self.gap))

    @property
    def converged(self):
        return self.upper.converged and self.lower.converged


def refine_upper(problem, config, report: SolveReport, vi_opts=VISolveOptions(tol=1e-10)):
    """Replace the Cournot follower state by the exact equilibrium at x_final."""
    sol = solve_vi(problem, config, report.x_final, report.y_final, vi_opts)
    report.y_final = sol.y_star
    report.y_response = sol.y_star.copy()
    report.objective = float(problem.upper(report.x_final, sol.y_star))
    report.refined = True
    return report


def bracket(problem, config, opts: SolverOptions, x0, y0, refine=True) -> BracketResult:
    upper = solve_cournot(problem, config, opts, x0, y0)
    if refine and upper.converged:
        refine_upper(problem, config, upper)
    lower = solve_monopoly(problem, config, opts, x0, y0)
    return BracketResult(upper, lower, upper.objective - lower.objective)


@dataclass
class AdaptiveResult:
    upper: SolveReport
    lower: SolveReport
    gap: float
    T: int
    converged: bool
    history: list

    def __iter__(self):
        return iter((self.upper, self.lower, self.gap))


def adaptive_bracket(problem, config0: DynamicsConfig, opts: SolverOptions, x0, y0, T_schedule, gap_tol) -> AdaptiveResult:
    """Bracket over an increasing T schedule, warm-starting each stage from the last monopoly point."""
    T_schedule = [int(t) for t in T_schedule]
    if not T_schedule:
        raise ValueError("T_schedule must be nonempty")
    if any(b <= a for a, b in zip(T_schedule, T_schedule[1:])):
        raise ValueError("T_schedule must be strictly increasing")
    x, y = _as_start(problem, x0, y0)
    history = []
    for T in T_schedule:
        cfg = config0.with_T(T)
        res = bracket(problem, cfg, opts, x, y)
        history.append(res)
        log.info("adaptive stage T=%d gap=%.6g", T, res.gap)
        if res.gap <= gap_tol:
            return AdaptiveResult(res.upper, res.lower, res.gap, T, True, history)
        x = res.lower.x_final
        y, _ = unroll(problem, cfg, x, res.lower.y_final)
    best = min(history, key=lambda r: r.gap)
    return AdaptiveResult(best.upper, best.lower, best.gap, best.upper.T, False, history)


@dataclass
class MultiStartResult:
    reports: list
    best: SolveReport

    @property
    def objectives(self):
        return np.array([r.objective for r in self.reports])

    @property
    def spread(self):
        obj = self.objectives
        return float(obj.max() - obj.min())


def sample_start(problem, rng):
    return problem.set_x.sample(rng), problem.set_y.sample(rng)


def multi_start(problem, config, opts: SolverOptions, n_starts, seed=None, which=MONOPOLY, jobs=1) -> MultiStartResult:
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    if which not in (COURNOT, MONOPOLY):
        raise ValueError(f"which must be {COURNOT!r} or {MONOPOLY!r}")
    seed = opts.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(n_starts)
    starts = [sample_start(problem, np.random.default_rng(c)) for c in children]
    solver = solve_cournot if which == COURNOT else solve_monopoly

    def run(start):
        return solver(problem, config, opts, *start)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run, starts))
    else:
        reports = [run(s) for s in starts]
    # stable sort keeps start order among ties
    reports.sort(key=lambda r: r.objective)
    return MultiStartResult(reports, reports[0])


def monopoly_constant(params: BoundParams):
    p = params
    return 2 * p.G_y * p.L_x + p.G_xy * p.d_max + 2 * p.L_x * p.G_yy * p.d_max + p.G_y * p.H_x


def bound_estimate(params: BoundParams, T, G_l=None):
    """A-priori bounds (cournot_gap, monopoly_gap) on |l^(T) - l*| at horizon T.

    Stated for the normalization gamma = 1; rescale f and r accordingly
    (f -> f/gamma, r -> r*gamma leaves h unchanged).  ``G_l`` defaults to
    G_x + L_x * G_y.
    """
    if not math.isclose(params.gamma, 1.0, rel_tol=1e-12):
        raise NormalizationError(
            f"bounds assume gamma = 1, got {params.gamma:g}; rescale f by 1/gamma and r by gamma"
        )
    if T < 0:
        raise ValueError("T must be >= 0")
    g_l = params.G_l if G_l is None else float(G_l)
    decay = contraction_factor(params) ** (T / 2.0)
    p = params
    cournot = g_l * p.G_y * p.L_x * decay
    monopoly = monopoly_constant(p) * g_l * decay + p.G_y * p.d_max * (1 + p.H_xy + p.L_x * p.H_yy) * (T + 1) * decay
    return cournot, monopoly
