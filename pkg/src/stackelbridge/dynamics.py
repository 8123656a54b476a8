"""Follower dynamics h(x, y), its T-fold composition and forward-mode Jacobians.

Two one-step maps are provided:

* ``projection``: h(x, y) = P_Y(y - r f(x, y));
* ``mirror``: the entropic (KL) mirror step on each simplex block,
  h_k = y_k exp(-r f_k) / sum_j y_j exp(-r f_j).

Jacobians of h^(t) are carried forward alongside the iterate, one
(m, n) and one (n, n) matrix per step, so no tape is needed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import BilevelProblem
from .errors import DegenerateSupportError

PROJECTION = "projection"
MIRROR = "mirror"
MIRROR_FLOOR = 1e-300


@dataclass(frozen=True)
class DynamicsConfig:
    kind: str = PROJECTION
    r: float = 0.1
    T: int = 1

    def __post_init__(self):
        if self.kind not in (PROJECTION, MIRROR):
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if not self.r > 0:
            raise ValueError("r must be positive")
        if self.T < 0 or int(self.T) != self.T:
            raise ValueError("T must be a nonnegative integer")

    def with_T(self, T):
        return DynamicsConfig(self.kind, self.r, int(T))


@dataclass
class UnrollState:
    y_t: np.ndarray
    jac_x: np.ndarray
    jac_y: np.ndarray
    t: int = 0
    # smallest distance of any projection argument to a kink along the path
    kink_margin: float = np.inf

    @classmethod
    def initial(cls, y0, dim_x):
        n = y0.shape[0]
        return cls(y0.copy(), np.zeros((dim_x, n)), np.eye(n), 0)


def _check_mirror_set(problem):
    blocks = problem.set_y.simplex_blocks()
    if blocks is None:
        raise ValueError("mirror dynamics need set_y to be a simplex or a product of simplices")
    return blocks


def _mirror_update(problem, y, fval, r):
    blocks = _check_mirror_set(problem)
    if np.any((y <= 0.0) & (fval < 0.0)):
        raise DegenerateSupportError("zero coordinate with negative cost cannot re-enter the support")
    y = np.maximum(y, MIRROR_FLOOR)
    out = np.empty_like(y)
    for b in blocks:
        fb = fval[b]
        # shift by the block minimum; the normalisation cancels it
        w = y[b] * np.exp(-r * (fb - fb.min()))
        out[b] = w / w.sum()
    return out, y, blocks


def step(problem: BilevelProblem, config: DynamicsConfig, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    fval = np.asarray(problem.lower_map(x, y), dtype=float)
    if config.kind == PROJECTION:
        return problem.set_y.project(y - config.r * fval)
    return _mirror_update(problem, y, fval, config.r)[0]


def step_with_jacobians(problem, config, x, y):
    """One step plus (grad_x h, grad_y h) at (x, y), rows indexed by the input.

    Returns (y_next, jac_x, jac_y, kink_margin).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = config.r
    fval = np.asarray(problem.lower_map(x, y), dtype=float)
    fx = np.asarray(problem.jac_lower_x(x, y), dtype=float).reshape(problem.dim_x, problem.dim_y)
    fy = np.asarray(problem.jac_lower_y(x, y), dtype=float).reshape(problem.dim_y, problem.dim_y)
    n = y.shape[0]
    if config.kind == PROJECTION:
        z = y - r * fval
        y_next = problem.set_y.project(z)
        sy = problem.set_y
        jac_x = sy.right_multiply(z, -r * fx)
        jac_y = sy.right_multiply(z, np.eye(n) - r * fy)
        return y_next, jac_x, jac_y, sy.kink_margin(z)
    y_next, y_safe, blocks = _mirror_update(problem, y, fval, r)
    # A = diag(y') - y' y'^T per block; standard Jacobians are
    # d y'/d f = -r A and direct d y'/d y = A diag(1/y)
    jac_x = _times_mirror_block(-r * fx, y_next, blocks)
    jac_y = _times_mirror_block(np.diag(1.0 / y_safe) - r * fy, y_next, blocks)
    return y_next, jac_x, jac_y, np.inf


def _times_mirror_block(M, y_next, blocks):
    """M @ A with A block diagonal, A_b = diag(y'_b) - y'_b y'_b^T."""
    out = M * y_next
    for b in blocks:
        yb = y_next[b]
        out[:, b] -= np.outer(M[:, b] @ yb, yb)
    return out


def unroll(problem, config, x, y0, T=None, record_trace=False):
    """Apply h T times (``config.T`` unless overridden).  Returns (y_T, trace)."""
    T = config.T if T is None else int(T)
    y = np.asarray(y0, dtype=float).copy()
    trace = [y.copy()] if record_trace else None
    for _ in range(T):
        y = step(problem, config, x, y)
        if record_trace:
            trace.append(y.copy())
    return y, trace


def unroll_with_jacobians(problem, config, x, y0, T=None) -> UnrollState:
    """y_T together with grad_x h^(T) and grad_y h^(T).

    grad_x h^(t) = grad_x h(x, y^{t-1}) + grad_x h^(t-1) grad_y h(x, y^{t-1})
    grad_y h^(t) = grad_y h^(t-1) grad_y h(x, y^{t-1})
    """
    T = config.T if T is None else int(T)
    state = UnrollState.initial(np.asarray(y0, dtype=float), problem.dim_x)
    for t in range(1, T + 1):
        y_next, hx, hy, margin = step_with_jacobians(problem, config, x, state.y_t)
        first = t == 1  # jac_x = 0 and jac_y = I before the first step
        state = UnrollState(
            y_t=y_next,
            jac_x=hx if first else hx + state.jac_x @ hy,
            jac_y=hy if first else state.jac_y @ hy,
            t=t,
            kink_margin=min(state.kink_margin, margin),
        )
    return state


@dataclass
class LTGradient:
    value: float
    grad_x: np.ndarray
    grad_y: np.ndarray
    y_T: np.ndarray
    state: Optional[UnrollState] = field(default=None, repr=False)


def grad_lT(problem, config, x, y0, T=None) -> LTGradient:
    """Value and gradients of l^(T)(x, y) = l(x, h^(T)(x, y))."""
    x = np.asarray(x, dtype=float)
    state = unroll_with_jacobians(problem, config, x, y0, T)
    y_T = state.y_t
    gx = np.asarray(problem.grad_upper_x(x, y_T), dtype=float)
    gy = np.asarray(problem.grad_upper_y(x, y_T), dtype=float)
    return LTGradient(
        value=float(problem.upper(x, y_T)),
        grad_x=gx + state.jac_x @ gy,
        grad_y=state.jac_y @ gy,
        y_T=y_T,
        state=state,
    )


def lT_value(problem, config, x, y0, T=None) -> float:
    y_T, _ = unroll(problem, config, x, y0, T)
    return float(problem.upper(np.asarray(x, dtype=float), y_T))
