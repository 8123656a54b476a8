"""Bilevel problem container, bound constants and Jacobian diagnostics.

Sign and layout conventions used throughout the package:

* the upper objective is always *minimized*; maximizing benchmarks
  (duopoly profit) negate it;
* a derivative of a vector map with respect to an input is stored with
  rows indexed by the input, so ``jac_lower_x`` has shape ``(m, n)`` and
  chain rules compose as plain left-to-right matrix products.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import AdmissibilityError, NumericalError
from .sets import FeasibleSet

Vector = np.ndarray


@dataclass(frozen=True)
class BilevelProblem:
    """min_x l(x, y*)  s.t.  <f(x, y*), y - y*> >= 0 for all y in Y."""

    dim_x: int
    dim_y: int
    upper: Callable[[Vector, Vector], float]
    grad_upper_x: Callable[[Vector, Vector], Vector]
    grad_upper_y: Callable[[Vector, Vector], Vector]
    lower_map: Callable[[Vector, Vector], Vector]
    jac_lower_x: Callable[[Vector, Vector], np.ndarray]
    jac_lower_y: Callable[[Vector, Vector], np.ndarray]
    set_x: FeasibleSet
    set_y: FeasibleSet
    name: str = "problem"
    meta: dict = field(default_factory=dict, compare=False)
    # weight lam of a lam*||x||_2 term that ``upper`` contains; solvers treat it
    # by its proximal map instead of the (discontinuous) gradient x/||x||
    norm_weight_x: float = 0.0

    def __post_init__(self):
        if self.set_x.dim != self.dim_x or self.set_y.dim != self.dim_y:
            raise ValueError("feasible set dimensions do not match dim_x/dim_y")
        if self.norm_weight_x < 0:
            raise ValueError("norm_weight_x must be nonnegative")


def eval_upper(problem: BilevelProblem, x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    value = float(problem.upper(x, y))
    if not math.isfinite(value):
        raise NumericalError(f"upper objective of {problem.name} is not finite", x=x, y=y)
    return value


@dataclass
class DiagnosticReport:
    max_rel_error: float
    errors: dict
    samples: int
    skipped: bool = False
    tolerance: float = 1e-4

    @property
    def passed(self):
        return not self.skipped and self.max_rel_error <= self.tolerance


def _fd_jacobian(fun, point, step):
    """Central differences, rows indexed by the perturbed coordinate."""
    rows = []
    for i in range(point.shape[0]):
        e = np.zeros_like(point)
        e[i] = step
        rows.append((np.atleast_1d(fun(point + e)) - np.atleast_1d(fun(point - e))) / (2 * step))
    return np.array(rows)


def _rel_error(analytic, numeric):
    # reference is the finite-difference value, floored at 1 for near-zero blocks
    scale = max(np.linalg.norm(numeric), 1.0)
    return float(np.linalg.norm(np.asarray(analytic) - numeric) / scale)


def _interior_point(feasible_set, rng, margin):
    """A feasible point pulled away from the relative boundary of the set."""
    y = feasible_set.sample(rng)
    blocks = feasible_set.simplex_blocks()
    if blocks is not None:
        center = np.concatenate([np.full(len(b), 1.0 / len(b)) for b in blocks])
        return 0.5 * y + 0.5 * center
    box = feasible_set.as_box() if hasattr(feasible_set, "as_box") else feasible_set
    lo = getattr(box, "lower", None)
    if lo is not None:
        y = np.where(np.isfinite(lo), y + margin + 0.1 * rng.random(y.shape[0]), y)
        y = feasible_set.project(y)
    return y


def check_jacobians(problem: BilevelProblem, samples=10, seed=0, step=1e-6, tolerance=1e-4):
    """Compare analytic derivatives against central finite differences."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    worst = {"grad_upper_x": 0.0, "grad_upper_y": 0.0, "jac_lower_x": 0.0, "jac_lower_y": 0.0}
    if problem.set_x.diameter() == 0 or problem.set_y.diameter() == 0:
        warnings.warn(f"{problem.name}: a feasible set is a single point, skipping check")
        return DiagnosticReport(np.nan, worst, samples, skipped=True, tolerance=tolerance)
    for _ in range(samples):
        x = _interior_point(problem.set_x, rng, 10 * step)
        y = _interior_point(problem.set_y, rng, 10 * step)
        with np.errstate(all="ignore"):
            probe = [problem.lower_map(x + dx, y + dy) for dx, dy in
                     ((step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step))]
        if not all(np.all(np.isfinite(v)) for v in probe):
            # maps undefined just outside the set: no usable neighbourhood
            warnings.warn(f"{problem.name}: maps not finite near sample point, skipping check")
            return DiagnosticReport(np.nan, worst, samples, skipped=True, tolerance=tolerance)
        checks = {
            "grad_upper_x": (problem.grad_upper_x(x, y), _fd_jacobian(lambda u: problem.upper(u, y), x, step).ravel()),
            "grad_upper_y": (problem.grad_upper_y(x, y), _fd_jacobian(lambda u: problem.upper(x, u), y, step).ravel()),
            "jac_lower_x": (problem.jac_lower_x(x, y), _fd_jacobian(lambda u: problem.lower_map(u, y), x, step)),
            "jac_lower_y": (problem.jac_lower_y(x, y), _fd_jacobian(lambda u: problem.lower_map(x, u), y, step)),
        }
        for key, (analytic, numeric) in checks.items():
            worst[key] = max(worst[key], _rel_error(analytic, numeric))
    return DiagnosticReport(max(worst.values()), worst, samples, tolerance=tolerance)


@dataclass(frozen=True)
class BoundParams:
    """Constants of the a-priori gap bounds.

    ``certified`` is False when the numbers come from sampling rather
    than from an analytic argument.
    """

    gamma: float
    L_x: float
    L_y: float
    G_x: float
    G_y: float
    G_xy: float
    G_yy: float
    H_x: float
    H_xy: float
    H_yy: float
    d_max: float
    r: float
    certified: bool = True

    def __post_init__(self):
        if self.gamma <= 0 or self.r <= 0:
            raise ValueError("gamma and r must be positive")
        for name in ("L_x", "L_y", "G_x", "G_y", "G_xy", "G_yy", "H_x", "H_xy", "H_yy", "d_max"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.L_y > 0 and self.r >= 2 * self.gamma / self.L_y**2:
            raise AdmissibilityError(
                f"r={self.r:g} violates r < 2*gamma/L_y^2 = {2 * self.gamma / self.L_y**2:g}"
            )

    @property
    def G_l(self):
        return self.G_x + self.L_x * self.G_y


def contraction_factor(params: BoundParams) -> float:
    """eta = 1 - 2*gamma*r + r^2*L_y^2 (squared per-step contraction of the dynamics)."""
    g, ly, r = params.gamma, params.L_y, params.r
    if ly > 0 and r >= 2 * g / ly**2:
        raise AdmissibilityError(f"r={r:g} violates r < 2*gamma/L_y^2")
    eta = 1.0 - 2.0 * g * r + r * r * ly * ly
    # gamma <= L_y always for a Lipschitz strongly monotone map, so eta >= 0
    # up to rounding
    return max(eta, 0.0)


def estimate_bound_params(problem: BilevelProblem, r, samples=200, seed=0) -> BoundParams:
    """Sample Jacobian norms to guess the bound constants.

    The result is labelled ``certified=False``: sampled maxima are lower
    estimates of the true suprema.  gamma is the smallest eigenvalue of
    the symmetric part of jac_lower_y over the samples; second-order
    constants are left at zero.
    """
    rng = np.random.default_rng(seed)
    gamma, lx, ly, gx, gy = np.inf, 0.0, 0.0, 0.0, 0.0
    for _ in range(samples):
        x = problem.set_x.sample(rng)
        y = problem.set_y.sample(rng)
        jy = np.asarray(problem.jac_lower_y(x, y))
        gamma = min(gamma, float(np.linalg.eigvalsh(0.5 * (jy + jy.T)).min()))
        ly = max(ly, float(np.linalg.norm(jy, 2)))
        lx = max(lx, float(np.linalg.norm(np.asarray(problem.jac_lower_x(x, y)), 2)))
        gx = max(gx, float(np.linalg.norm(problem.grad_upper_x(x, y))))
        gy = max(gy, float(np.linalg.norm(problem.grad_upper_y(x, y))))
    gamma = max(gamma, 1e-12)
    return BoundParams(
        gamma=gamma, L_x=lx, L_y=ly, G_x=gx, G_y=gy, G_xy=0.0, G_yy=0.0,
        H_x=r * lx, H_xy=0.0, H_yy=0.0, d_max=problem.set_y.diameter(), r=r,
        certified=False,
    )
