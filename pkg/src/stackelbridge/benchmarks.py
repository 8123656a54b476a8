"""Benchmark bilevel problems with analytic derivatives.

* Stackelberg duopoly with linear inverse demand p = 1 - x - y;
* a 4x4 quadratic whose lower level has a non-unique solution set;
* continuous network design with a Wardrop (path-based) lower level,
  including the Braess network.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import BilevelProblem, BoundParams
from .errors import DomainError
from .sets import Box, FullSpace, NonnegWithFixedZeros, Product, Simplex

DUOPOLY_CAP = 10.0
CAPACITY_CAP = 100.0
EXP1_CAP = 100.0


def make_duopoly() -> BilevelProblem:
    """Leader output x, follower output y, leader minimizes -x(1 - x - y).

    The follower plays gradient ascent on its profit y(1 - x - y), i.e. the
    VI map is f = -d/dy [y(1 - x - y)] = x + 2y - 1.
    """

    def upper(x, y):
        return float(-x[0] * (1.0 - x[0] - y[0]))

    def grad_x(x, y):
        return np.array([-(1.0 - 2.0 * x[0] - y[0])])

    def grad_y(x, y):
        return np.array([x[0]])

    def lower(x, y):
        return np.array([x[0] + 2.0 * y[0] - 1.0])

    return BilevelProblem(
        dim_x=1,
        dim_y=1,
        upper=upper,
        grad_upper_x=grad_x,
        grad_upper_y=grad_y,
        lower_map=lower,
        jac_lower_x=lambda x, y: np.array([[1.0]]),
        jac_lower_y=lambda x, y: np.array([[2.0]]),
        set_x=Box([0.0], [DUOPOLY_CAP]),
        set_y=Box([0.0], [DUOPOLY_CAP]),
        name="duopoly",
    )


def duopoly_best_response(x):
    return max((1.0 - x) / 2.0, 0.0)


def duopoly_stackelberg_value(x):
    """l*(x) = l(x, y*(x)) in the minimization convention."""
    return -x * (1.0 - x - duopoly_best_response(x))


def duopoly_bound_params(r=0.4) -> BoundParams:
    """Certified bound constants for the duopoly on its capped box [0, 10]^2.

    The bounds need gamma = 1, so the VI map is rescaled to f/2 = (x + 2y - 1)/2
    with step 2r; h is unchanged.  Then gamma = L_y = 1, L_x = 1/2.  With
    l = -x + x^2 + xy: |l_x| = |2x + y - 1| <= 29, |l_y| = |x| <= 10,
    l_xy = 1, l_yy = 0.  h is piecewise linear, so |h_x| <= 2r * L_x and the
    second derivatives of h vanish wherever they exist.
    """
    r2 = 2.0 * r
    cap = DUOPOLY_CAP
    return BoundParams(
        gamma=1.0, L_x=0.5, L_y=1.0,
        G_x=2 * cap + cap - 1, G_y=cap, G_xy=1.0, G_yy=0.0,
        H_x=r2 * 0.5, H_xy=0.0, H_yy=0.0, d_max=cap, r=r2,
    )


EXP1_A = np.array([2.0, 3.0, 4.0, 5.0])
EXP1_B = np.array([15.0, 2.0, 8.0, 5.0])
EXP1_W = np.array([2.0, 1.1, 0.9, 0.01])


def exp1_matrix():
    e = np.eye(4)
    return np.column_stack([e[0] + e[2], e[1] + e[3], e[0] + e[3], e[1] + e[2]])


def make_quadratic_exp1() -> BilevelProblem:
    """Upper: ||x|| + <D^T(a + x + b*v), w*y>, lower potential <1, (a+x)*v + b*v^2/2>, v = D y.

    x is restricted to a + x >= 0 with x_4 = 0 (and capped above); y lives
    on the 4-simplex.  The lower level is convex but not strongly so.
    """
    a, b, w = EXP1_A, EXP1_B, EXP1_W
    D = exp1_matrix()
    Q = D.T @ np.diag(b) @ D

    def q(x, y):
        return D.T @ (a + x + b * (D @ y))

    def upper(x, y):
        return float(np.linalg.norm(x) + q(x, y) @ (w * y))

    def grad_x(x, y):
        nx = np.linalg.norm(x)
        g = x / nx if nx > 0 else np.zeros_like(x)
        return g + D @ (w * y)

    def grad_y(x, y):
        return w * q(x, y) + Q @ (w * y)

    lower = np.concatenate([-a[:3], [0.0]])
    upper_cap = np.array([EXP1_CAP, EXP1_CAP, EXP1_CAP, 0.0])
    return BilevelProblem(
        dim_x=4,
        dim_y=4,
        upper=upper,
        grad_upper_x=grad_x,
        grad_upper_y=grad_y,
        lower_map=q,
        jac_lower_x=lambda x, y: D.copy(),
        jac_lower_y=lambda x, y: Q.copy(),
        set_x=Box(lower, upper_cap),
        set_y=Simplex(4),
        name="quad_exp1",
        meta={"D": D, "Q": Q},
        norm_weight_x=1.0,
    )


@dataclass
class NetworkDesignInstance:
    """Path-based congestion network.

    Arc and path indices are 0-based.  Paths must be listed OD block by OD
    block (all paths of OD 0 first, and so on).
    """

    u0: np.ndarray
    s: np.ndarray
    b_cost: np.ndarray
    expandable: np.ndarray
    paths: list
    path_od: np.ndarray
    demand: np.ndarray
    od_pairs: list
    gamma_weight: float = 1.0
    bpr_b: Optional[np.ndarray] = None
    bpr_power: Optional[np.ndarray] = None
    arc_nodes: Optional[list] = None
    name: str = "network"
    Lambda: np.ndarray = field(init=False, repr=False)
    Sigma: np.ndarray = field(init=False, repr=False)
    d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.u0 = np.asarray(self.u0, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.b_cost = np.asarray(self.b_cost, dtype=float)
        self.expandable = np.asarray(self.expandable, dtype=bool)
        self.path_od = np.asarray(self.path_od, dtype=int)
        self.demand = np.asarray(self.demand, dtype=float)
        self.paths = [tuple(int(a) for a in p) for p in self.paths]
        n_arcs, n_paths = self.u0.shape[0], len(self.paths)
        if self.bpr_b is None:
            self.bpr_b = np.full(n_arcs, 0.15)
        if self.bpr_power is None:
            self.bpr_power = np.full(n_arcs, 4.0)
        self.bpr_b = np.asarray(self.bpr_b, dtype=float)
        self.bpr_power = np.asarray(self.bpr_power, dtype=float)
        if np.any(self.u0 <= 0) or np.any(self.s <= 0):
            raise ValueError("free-flow times and capacities must be positive")
        if np.any(np.diff(self.path_od) < 0):
            raise ValueError("paths must be grouped by OD pair")
        if np.any(self.demand <= 0):
            raise ValueError("OD demands must be positive")
        if set(self.path_od.tolist()) != set(range(len(self.od_pairs))):
            raise ValueError("every OD pair needs at least one path")
        if any(not p or min(p) < 0 or max(p) >= n_arcs for p in self.paths):
            raise ValueError("path references an arc index out of range")
        lam = np.zeros((n_arcs, n_paths))
        for k, p in enumerate(self.paths):
            lam[list(p), k] = 1.0
        sig = np.zeros((len(self.od_pairs), n_paths))
        sig[self.path_od, np.arange(n_paths)] = 1.0
        self.Lambda = lam
        self.Sigma = sig
        self.d = self.demand[self.path_od]

    @property
    def n_arcs(self):
        return self.u0.shape[0]

    @property
    def n_paths(self):
        return len(self.paths)

    def block_sizes(self):
        return np.bincount(self.path_od, minlength=len(self.od_pairs))


def bpr_time(u0, cap, v, coef=0.15, power=4.0):
    return u0 * (1.0 + coef * (v / cap) ** power)


def make_network_design(inst: NetworkDesignInstance, scale_by_demand=False) -> BilevelProblem:
    """Network design bilevel problem over capacity additions x and route shares y.

    Upper: <u(x, v), v> + gamma * <b, x^2> with v = Lambda (d * y).
    Lower: path costs Lambda^T u(x, v).  With ``scale_by_demand`` each
    cost is multiplied by its path demand, which makes the map the exact
    gradient of the Beckmann potential in share coordinates.  Positive
    per-block rescaling leaves the equilibrium set unchanged, but it
    multiplies the Lipschitz constant by about d^2, so the default keeps
    the unscaled map (contractive at r = 0.1 on Braess; the scaled one
    is not).
    """
    lam, d = inst.Lambda, inst.d
    u0, s, cb, cp = inst.u0, inst.s, inst.bpr_b, inst.bpr_power
    gw, bc = inst.gamma_weight, inst.b_cost
    scale = d.copy() if scale_by_demand else np.ones_like(d)

    def parts(x, y):
        cap = s + x
        if np.any(cap <= 0):
            raise DomainError("arc capacity s + x must stay positive")
        v = lam @ (d * y)
        ratio = v / cap
        u = u0 * (1.0 + cb * ratio**cp)
        # derivatives written to stay finite at v = 0
        du_dv = u0 * cb * cp * np.where(v > 0, ratio ** (cp - 1), 0.0) / cap
        du_dx = -u0 * cb * cp * ratio**cp / cap
        return v, u, du_dv, du_dx

    def upper(x, y):
        v, u, _, _ = parts(x, y)
        return float(u @ v + gw * bc @ (x * x))

    def grad_x(x, y):
        v, _, _, du_dx = parts(x, y)
        return v * du_dx + 2.0 * gw * bc * x

    def grad_y(x, y):
        v, u, du_dv, _ = parts(x, y)
        return d * (lam.T @ (u + v * du_dv))

    def lower(x, y):
        _, u, _, _ = parts(x, y)
        return scale * (lam.T @ u)

    def jac_x(x, y):
        _, _, _, du_dx = parts(x, y)
        return (du_dx[:, None] * lam) * scale[None, :]

    def jac_y(x, y):
        _, _, du_dv, _ = parts(x, y)
        return (d[:, None] * (lam.T @ (du_dv[:, None] * lam))) * scale[None, :]

    zeros = np.nonzero(~inst.expandable)[0]
    sizes = inst.block_sizes()
    set_y = Simplex(int(sizes[0])) if len(sizes) == 1 else Product(tuple(Simplex(int(k)) for k in sizes))
    return BilevelProblem(
        dim_x=inst.n_arcs,
        dim_y=inst.n_paths,
        upper=upper,
        grad_upper_x=grad_x,
        grad_upper_y=grad_y,
        lower_map=lower,
        jac_lower_x=jac_x,
        jac_lower_y=jac_y,
        set_x=NonnegWithFixedZeros(inst.n_arcs, frozenset(zeros.tolist()), CAPACITY_CAP),
        set_y=set_y,
        name=inst.name,
        meta={"instance": inst, "scale_by_demand": scale_by_demand},
    )


def make_braess() -> NetworkDesignInstance:
    """Braess network: nodes 1..4, OD 1 -> 4 with demand 6, three paths."""
    return NetworkDesignInstance(
        u0=[1.0, 3.0, 3.0, 0.5, 1.0],
        s=[2.0, 4.0, 4.0, 1.0, 2.0],
        b_cost=[1.0, 3.0, 3.0, 0.5, 1.0],
        expandable=[True] * 5,
        paths=[(0, 2), (0, 3, 4), (1, 4)],
        path_od=[0, 0, 0],
        demand=[6.0],
        od_pairs=[(1, 4)],
        gamma_weight=1.0,
        arc_nodes=[(1, 2), (1, 3), (2, 4), (2, 3), (3, 4)],
        name="braess",
    )


def uniform_shares(inst_or_problem) -> np.ndarray:
    set_y = inst_or_problem.set_y
    blocks = set_y.simplex_blocks()
    y = np.empty(set_y.dim)
    for b in blocks:
        y[b] = 1.0 / len(b)
    return y


def default_start(problem: BilevelProblem):
    """Deterministic feasible start used by the CLI and the acceptance runs."""
    if problem.name == "duopoly":
        return np.array([0.0]), np.array([0.0])
    if problem.name == "quad_exp1":
        return np.zeros(4), np.array([0.4, 0.3, 0.2, 0.1])
    return np.zeros(problem.dim_x), uniform_shares(problem)


def make_random_quadratic_vi(n, m=2, seed=0, set_kind="box", gamma=1.0, skew=0.5) -> BilevelProblem:
    """Random strongly monotone affine VI f = A y + B^T x + c with a smooth quadratic upper level.

    A = gamma*I + S S^T + skew*(K - K^T), so the symmetric part of A has
    smallest eigenvalue >= gamma.  ``meta`` carries gamma, L_y = ||A||_2
    and L_x = ||B||_2.
    """
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n, n)) / np.sqrt(n)
    K = rng.standard_normal((n, n)) / np.sqrt(n)
    A = gamma * np.eye(n) + S @ S.T + skew * (K - K.T)
    B = rng.standard_normal((m, n))
    c = rng.standard_normal(n)
    C = rng.standard_normal((m, n))
    target = rng.standard_normal(n)
    sets = {
        "box": lambda: Box(-np.ones(n), np.ones(n)),
        "simplex": lambda: Simplex(n),
        "full": lambda: FullSpace(n),
    }
    if set_kind not in sets:
        raise ValueError(f"set_kind must be one of {sorted(sets)}")

    def upper(x, y):
        return float(0.5 * x @ x + 0.5 * (y - target) @ (y - target) + x @ C @ y)

    return BilevelProblem(
        dim_x=m,
        dim_y=n,
        upper=upper,
        grad_upper_x=lambda x, y: x + C @ y,
        grad_upper_y=lambda x, y: (y - target) + C.T @ x,
        lower_map=lambda x, y: A @ y + B.T @ x + c,
        jac_lower_x=lambda x, y: B.copy(),
        jac_lower_y=lambda x, y: A.T.copy(),
        set_x=Box(-np.ones(m), np.ones(m)),
        set_y=sets[set_kind](),
        name=f"quadratic_vi_{set_kind}",
        meta={
            "gamma": float(np.linalg.eigvalsh(0.5 * (A + A.T)).min()),
            "L_y": float(np.linalg.norm(A, 2)),
            "L_x": float(np.linalg.norm(B, 2)),
            "A": A,
        },
    )


# Run defaults per benchmark: step r per dynamics kind, T sweep, solver steps.
# Braess needs smaller steps than 0.05: the y-block curvature of l is ~10^2.
PRESETS = {
    "duopoly": {"r": {"projection": 0.4}, "T": [0, 1, 2, 3, 4], "alpha": 0.05, "beta": 0.05},
    "quad_exp1": {"r": {"projection": 0.01, "mirror": 0.01}, "T": [0, 1, 2, 3, 4, 5], "alpha": 0.05, "beta": 0.05},
    "braess": {"r": {"projection": 0.1, "mirror": 0.25}, "T": [0, 1, 2, 4, 8], "alpha": 0.02, "beta": 0.002},
    "tntp": {"r": {"projection": 0.01, "mirror": 0.01}, "T": [1], "alpha": 0.02, "beta": 0.002},
}

REGISTRY = {
    "duopoly": make_duopoly,
    "quad_exp1": make_quadratic_exp1,
    "braess": lambda: make_network_design(make_braess()),
}


def build(name: str, **kwargs) -> BilevelProblem:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**kwargs)

