"""Lower-level VI solves by fixed-point iteration of the dynamics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import step
from .errors import ConvergenceError


@dataclass(frozen=True)
class VISolveOptions:
    tol: float = 1e-10
    max_iter: int = 100_000
    record_trace: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class VISolution:
    y_star: np.ndarray
    iterations: int
    residual: float
    history: list = field(default_factory=list)

    def __iter__(self):
        # allows ``y, iters, res = solve_vi(...)``
        return iter((self.y_star, self.iterations, self.residual))


def vi_residual(problem, config, x, y) -> float:
    """Fixed-point displacement ||h(x, y) - y||; zero exactly at VI solutions."""
    y = np.asarray(y, dtype=float)
    return float(np.linalg.norm(step(problem, config, x, y) - y))


def solve_vi(problem, config, x, y0, opts: VISolveOptions = VISolveOptions()) -> VISolution:
    y = np.asarray(y0, dtype=float).copy()
    history = []
    for it in range(1, opts.max_iter + 1):
        y_next = step(problem, config, x, y)
        res = float(np.linalg.norm(y_next - y))
        history.append(res)
        y = y_next
        if res <= opts.tol:
            # y is h applied to the last iterate; report its own residual
            final = vi_residual(problem, config, x, y)
            if final <= opts.tol:
                return VISolution(y, it, final, history if opts.record_trace else [])
    raise ConvergenceError(
        f"VI iteration did not reach tol={opts.tol:g} in {opts.max_iter} steps",
        last_iterate=y,
        residual=res,
        history=history,
    )
