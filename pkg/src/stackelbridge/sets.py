"""Projection-friendly convex sets.

Every set knows how to Euclidean-project a point onto itself and how to
report an almost-everywhere Jacobian of that projection.  Jacobians are
returned in the library-wide orientation (row index = input coordinate),
which for all sets here is symmetric anyway.

Kink convention: a coordinate sitting exactly on a bound is treated as
active, so its Jacobian row and column are zero.  In words:
pick the derivative of the clamped branch.  This is
deterministic and matches what ``project`` returns at the bound.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DimensionError, NumericalError

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ITER = 10_000


def _as_vector(z, dim):
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.shape[0] != dim:
        raise DimensionError(f"expected a vector of length {dim}, got shape {z.shape}")
    return z


class FeasibleSet:
    """Base class; subclasses are immutable dataclasses."""

    dim: int

    def project(self, z):
        raise NotImplementedError

    def jacobian(self, z):
        raise NotImplementedError

    def right_multiply(self, z, M):
        """M @ jacobian(z), overridden where the Jacobian has cheap structure."""
        return np.asarray(M) @ self.jacobian(z)

    def contains(self, y, tol=1e-10):
        y = _as_vector(y, self.dim)
        return bool(np.linalg.norm(self.project(y) - y) <= tol)

    def kink_margin(self, z):
        """Distance of ``z`` to the nearest point where the projection is not smooth."""
        return np.inf

    def sample(self, rng):
        """Standard normal draw, projected."""
        return self.project(rng.standard_normal(self.dim))

    def diameter(self):
        return np.inf

    def simplex_blocks(self):
        """Index arrays of the simplex blocks, or None if the set is not simplex-shaped."""
        return None


@dataclass(frozen=True)
class FullSpace(FeasibleSet):
    dim: int

    def project(self, z):
        return _as_vector(z, self.dim).copy()

    def jacobian(self, z):
        _as_vector(z, self.dim)
        return np.eye(self.dim)

    def right_multiply(self, z, M):
        _as_vector(z, self.dim)
        return np.array(M, dtype=float)


@dataclass(frozen=True, eq=False)
class Box(FeasibleSet):
    lower: np.ndarray
    upper: np.ndarray
    dim: int = field(init=False)

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).ravel()
        hi = np.asarray(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise DimensionError("box bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "dim", lo.shape[0])

    @classmethod
    def nonneg(cls, dim, cap=np.inf):
        return cls(np.zeros(dim), np.full(dim, cap, dtype=float))

    def project(self, z):
        return np.clip(_as_vector(z, self.dim), self.lower, self.upper)

    def _inside(self, z):
        z = _as_vector(z, self.dim)
        return ((z > self.lower) & (z < self.upper)).astype(float)

    def jacobian(self, z):
        return np.diag(self._inside(z))

    def right_multiply(self, z, M):
        return np.asarray(M, dtype=float) * self._inside(z)

    def kink_margin(self, z):
        z = _as_vector(z, self.dim)
        free = self.lower < self.upper
        if not np.any(free):
            return np.inf
        gaps = np.minimum(np.abs(z - self.lower), np.abs(z - self.upper))[free]
        return float(gaps.min())

    def diameter(self):
        return float(np.linalg.norm(self.upper - self.lower))


@dataclass(frozen=True, eq=False)
class NonnegWithFixedZeros(FeasibleSet):
    """Nonnegative orthant with some coordinates pinned at zero, optionally capped."""

    dim: int
    zero_indices: frozenset = frozenset()
    cap: float = np.inf

    def __post_init__(self):
        object.__setattr__(self, "zero_indices", frozenset(int(i) for i in self.zero_indices))
        if any(i < 0 or i >= self.dim for i in self.zero_indices):
            raise DimensionError("fixed-zero index out of range")

    def as_box(self):
        hi = np.full(self.dim, self.cap, dtype=float)
        hi[list(self.zero_indices)] = 0.0
        return Box(np.zeros(self.dim), hi)

    def project(self, z):
        return self.as_box().project(z)

    def jacobian(self, z):
        return self.as_box().jacobian(z)

    def right_multiply(self, z, M):
        return self.as_box().right_multiply(z, M)

    def kink_margin(self, z):
        return self.as_box().kink_margin(z)

    def sample(self, rng):
        return self.as_box().sample(rng)

    def diameter(self):
        return self.as_box().diameter()


@dataclass(frozen=True)
class AffineSum(FeasibleSet):
    """The hyperplane {y : sum(y) = target}."""

    dim: int
    target: float = 1.0

    def project(self, z):
        z = _as_vector(z, self.dim)
        return z - (z.sum() - self.target) / self.dim

    def jacobian(self, z):
        _as_vector(z, self.dim)
        return np.eye(self.dim) - np.full((self.dim, self.dim), 1.0 / self.dim)

    def right_multiply(self, z, M):
        _as_vector(z, self.dim)
        M = np.asarray(M, dtype=float)
        return M - M.mean(axis=1, keepdims=True)


def _simplex_threshold(z):
    """Sort-and-threshold: return tau with project(z) = max(z - tau, 0)."""
    u = np.sort(z)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, z.shape[0] + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return css[rho] / (rho + 1.0)


@dataclass(frozen=True)
class Simplex(FeasibleSet):
    """The probability simplex {y >= 0 : sum(y) = 1}."""

    dim: int

    def project(self, z):
        z = _as_vector(z, self.dim)
        if not np.all(np.isfinite(z)):
            raise NumericalError("cannot project a non-finite point onto the simplex", z=z)
        return np.maximum(z - _simplex_threshold(z), 0.0)

    def jacobian(self, z):
        support = self.project(z) > 0.0
        k = support.sum()
        jac = np.zeros((self.dim, self.dim))
        idx = np.nonzero(support)[0]
        jac[np.ix_(idx, idx)] = np.eye(k) - 1.0 / k
        return jac

    def right_multiply(self, z, M):
        M = np.asarray(M, dtype=float)
        idx = np.nonzero(self.project(z) > 0.0)[0]
        out = np.zeros_like(M)
        sub = M[:, idx]
        out[:, idx] = sub - sub.mean(axis=1, keepdims=True)
        return out

    def kink_margin(self, z):
        z = _as_vector(z, self.dim)
        if self.dim == 1:
            return np.inf
        return float(np.min(np.abs(z - _simplex_threshold(z))))

    def sample(self, rng):
        return rng.dirichlet(np.ones(self.dim))

    def diameter(self):
        return float(np.sqrt(2.0)) if self.dim > 1 else 0.0

    def simplex_blocks(self):
        return [np.arange(self.dim)]


@dataclass(frozen=True)
class Product(FeasibleSet):
    members: tuple
    dim: int = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "dim", sum(m.dim for m in self.members))

    def _slices(self):
        start = 0
        for m in self.members:
            yield m, slice(start, start + m.dim)
            start += m.dim

    def project(self, z):
        z = _as_vector(z, self.dim)
        out = np.empty_like(z)
        for m, sl in self._slices():
            out[sl] = m.project(z[sl])
        return out

    def jacobian(self, z):
        z = _as_vector(z, self.dim)
        jac = np.zeros((self.dim, self.dim))
        for m, sl in self._slices():
            jac[sl, sl] = m.jacobian(z[sl])
        return jac

    def right_multiply(self, z, M):
        z = _as_vector(z, self.dim)
        M = np.asarray(M, dtype=float)
        out = np.empty_like(M)
        for m, sl in self._slices():
            out[:, sl] = m.right_multiply(z[sl], M[:, sl])
        return out

    def kink_margin(self, z):
        z = _as_vector(z, self.dim)
        return min((m.kink_margin(z[sl]) for m, sl in self._slices()), default=np.inf)

    def sample(self, rng):
        return np.concatenate([m.sample(rng) for m in self.members])

    def diameter(self):
        return float(np.sqrt(sum(m.diameter() ** 2 for m in self.members)))

    def simplex_blocks(self):
        blocks = []
        for m, sl in self._slices():
            inner = m.simplex_blocks()
            if inner is None:
                return None
            blocks.extend(b + sl.start for b in inner)
        return blocks


def project(feasible_set: FeasibleSet, z) -> np.ndarray:
    return feasible_set.project(z)


def projection_jacobian(feasible_set: FeasibleSet, z) -> np.ndarray:
    return feasible_set.jacobian(z)


@dataclass
class DykstraResult:
    point: np.ndarray
    iterations: int
    residual: float


def project_dykstra(set_a, set_b, z, tol=DYKSTRA_TOL, max_iter=DYKSTRA_MAX_ITER, full_output=False):
    """Project onto ``set_a & set_b`` by Dykstra's alternating projections.

    Stops once both the iterate change and the gap between the two
    half-step points fall below ``tol``.
    """
    for s in (set_a, set_b):
        if not isinstance(s, (Box, AffineSum, NonnegWithFixedZeros)):
            raise TypeError(f"Dykstra supports Box and AffineSum members, got {type(s).__name__}")
    if set_a.dim != set_b.dim:
        raise DimensionError("Dykstra sets differ in dimension")
    x = _as_vector(z, set_a.dim).copy()
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    residual = np.inf
    for it in range(1, max_iter + 1):
        y = set_a.project(x + p)
        p = x + p - y
        x_new = set_b.project(y + q)
        q = y + q - x_new
        residual = max(np.linalg.norm(x_new - x), np.linalg.norm(x_new - y))
        x = x_new
        if residual <= tol:
            if full_output:
                return DykstraResult(x, it, residual)
            return x
    raise ConvergenceError(
        f"Dykstra did not reach tol={tol:g} in {max_iter} iterations",
        last_iterate=x,
        residual=residual,
    )


def simplex_as_intersection(dim):
    """The simplex written as nonnegative orthant intersected with the unit-sum plane."""
    return Box.nonneg(dim), AffineSum(dim, 1.0)


def product_of_simplices(sizes: Sequence[int]) -> FeasibleSet:
    if len(sizes) == 1:
        return Simplex(int(sizes[0]))
    return Product(tuple(Simplex(int(k)) for k in sizes))
