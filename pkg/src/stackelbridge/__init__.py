"""Approximate bilevel programs with VI constraints via T-step Cournot / monopoly brackets."""
from .core import BilevelProblem, BoundParams, check_jacobians, contraction_factor, eval_upper
from .dynamics import DynamicsConfig, grad_lT, step, unroll, unroll_with_jacobians
from .errors import *  # noqa: F401,F403
from .vi import VISolveOptions, solve_vi, vi_residual

__version__ = "0.1.0"
