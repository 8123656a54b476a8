"""Reference hypergradients: exact implicit differentiation and Neumann truncation.

At a fixed point y* = h(x, y*) the solution map satisfies
J = grad_x h + J grad_y h, i.e. J = grad_x h (I - grad_y h)^{-1}.
These baselines exist to validate the unrolled gradients of ``dynamics``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import step_with_jacobians, unroll_with_jacobians
from .errors import SingularSystemError
from .vi import VISolveOptions, solve_vi, vi_residual

IMPLICIT = "implicit_exact"
KINK_TOL = 1e-9


def neumann_method(k):
    return f"neumann_truncated({int(k)})"


def unrolled_method(T):
    return f"unrolled({int(T)})"


@dataclass
class HypergradReport:
    grad: np.ndarray
    method: str
    solve_residual: float
    condition_note: float = np.nan
    y_star: np.ndarray = None
    kink_margin: float = np.inf

    @property
    def near_kink(self):
        """True when some projection argument sits within KINK_TOL of a kink."""
        return self.kink_margin <= KINK_TOL


def _fixed_point_jacobians(problem, config, x, y_star):
    _, hx, hy, margin = step_with_jacobians(problem, config, x, y_star)
    return hx, hy, margin


def implicit_jacobian(problem, config, x, y_star, return_condition=False):
    """dy*/dx (rows indexed by x) from one dense LU solve with I - grad_y h."""
    hx, hy, _ = _fixed_point_jacobians(problem, config, x, y_star)
    n = hy.shape[0]
    rho = float(np.max(np.abs(np.linalg.eigvals(hy)))) if n else 0.0
    if rho >= 1.0:
        raise SingularSystemError(f"spectral radius of grad_y h is {rho:.6g} >= 1")
    lhs = np.eye(n) - hy
    try:
        # J (I - hy) = hx  <=>  (I - hy)^T J^T = hx^T
        jac = np.linalg.solve(lhs.T, hx.T).T
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(str(exc)) from None
    if return_condition:
        smin = np.linalg.svd(lhs, compute_uv=False).min()
        return jac, (np.inf if smin == 0 else 1.0 / smin)
    return jac


def neumann_jacobian(problem, config, x, y_star, k):
    """grad_x h * sum_{i=0}^{k} (grad_y h)^i."""
    if k < 0:
        raise ValueError("k must be >= 0")
    hx, hy, _ = _fixed_point_jacobians(problem, config, x, y_star)
    term = hx.copy()
    total = hx.copy()
    for _ in range(int(k)):
        term = term @ hy
        total += term
    return total


def _solve(problem, config, x, y0, opts):
    if y0 is None:
        y0 = problem.set_y.project(np.zeros(problem.dim_y))
    return solve_vi(problem, config, x, y0, opts)


def _assemble(problem, x, y_star, jac):
    gx = np.asarray(problem.grad_upper_x(x, y_star), dtype=float)
    gy = np.asarray(problem.grad_upper_y(x, y_star), dtype=float)
    return gx + jac @ gy


def hypergrad_exact(problem, config, x, opts: VISolveOptions = VISolveOptions(), y0=None) -> HypergradReport:
    """grad l*(x) = grad_x l + (dy*/dx) grad_y l at the solved equilibrium."""
    x = np.asarray(x, dtype=float)
    sol = _solve(problem, config, x, y0, opts)
    jac, cond = implicit_jacobian(problem, config, x, sol.y_star, return_condition=True)
    _, _, margin = _fixed_point_jacobians(problem, config, x, sol.y_star)
    return HypergradReport(_assemble(problem, x, sol.y_star, jac), IMPLICIT, sol.residual, cond, sol.y_star, margin)


def hypergrad_neumann(problem, config, x, k, opts: VISolveOptions = VISolveOptions(), y0=None) -> HypergradReport:
    x = np.asarray(x, dtype=float)
    sol = _solve(problem, config, x, y0, opts)
    jac = neumann_jacobian(problem, config, x, sol.y_star, k)
    _, _, margin = _fixed_point_jacobians(problem, config, x, sol.y_star)
    return HypergradReport(_assemble(problem, x, sol.y_star, jac), neumann_method(k), sol.residual,
                           y_star=sol.y_star, kink_margin=margin)


def hypergrad_unrolled(problem, config, x, T, opts: VISolveOptions = VISolveOptions(), y0=None) -> HypergradReport:
    """Unrolled gradient started at the solved fixed point (so h^(T)(x, y*) = y*)."""
    x = np.asarray(x, dtype=float)
    sol = _solve(problem, config, x, y0, opts)
    state = unroll_with_jacobians(problem, config, x, sol.y_star, T)
    return HypergradReport(_assemble(problem, x, state.y_t, state.jac_x), unrolled_method(T), sol.residual,
                           y_star=sol.y_star, kink_margin=state.kink_margin)


@dataclass
class DecayReport:
    entries: list
    rate: float
    near_kink: bool = False
    y_star: np.ndarray = field(default=None, repr=False)

    def __iter__(self):
        return iter(self.entries)


def fit_geometric_rate(Ts, gaps, floor=1e-14):
    """Least-squares slope of log(gap) against T, returned as a per-step ratio."""
    Ts = np.asarray(Ts, dtype=float)
    gaps = np.asarray(gaps, dtype=float)
    keep = gaps > floor
    if keep.sum() < 2:
        return np.nan
    slope = np.polyfit(Ts[keep], np.log(gaps[keep]), 1)[0]
    return float(np.exp(slope))


def unroll_vs_exact_decay(problem, config, x, T_list, y_star=None, opts: VISolveOptions = VISolveOptions()) -> DecayReport:
    """gap(T) = ||dy*/dx - grad_x h^(T)(x, y*)||_2 for T in T_list."""
    T_list = [int(t) for t in T_list]
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ValueError("T_list must be strictly increasing")
    x = np.asarray(x, dtype=float)
    if y_star is None:
        y_star = _solve(problem, config, x, None, opts).y_star
    exact = implicit_jacobian(problem, config, x, y_star)
    entries = []
    margin = np.inf
    for T in T_list:
        state = unroll_with_jacobians(problem, config, x, y_star, T)
        margin = min(margin, state.kink_margin)
        entries.append((T, float(np.linalg.norm(exact - state.jac_x, 2))))
    rate = fit_geometric_rate([t for t, _ in entries], [g for _, g in entries])
    return DecayReport(entries, rate, margin <= KINK_TOL, y_star)


def fixed_point_residual(problem, config, x, y_star):
    return vi_residual(problem, config, x, y_star)
