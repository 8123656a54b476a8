import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackelbridge.algorithms import (
    COURNOT, MONOPOLY, SolverOptions, adaptive_bracket, bound_estimate, bracket, leader_step,
    monopoly_constant, multi_start, prox_norm_box, solve_cournot, solve_monopoly,
)
from stackelbridge.benchmarks import (
    PRESETS, duopoly_stackelberg_value, make_braess, make_duopoly, make_network_design,
    make_quadratic_exp1,
)
from stackelbridge.core import BoundParams
from stackelbridge.dynamics import DynamicsConfig, grad_lT
from stackelbridge.errors import NormalizationError
from stackelbridge.sets import Box, NonnegWithFixedZeros
from stackelbridge.vi import vi_residual

DUO = make_duopoly()
OPTS = SolverOptions()
TABLE_COURNOT = [0.111, 0.124, 0.125, 0.125, 0.125]
TABLE_MONOPOLY = [0.250, 0.150, 0.130, 0.126, 0.125]


def duo_cfg(T):
    return DynamicsConfig("projection", 0.4, T)


@pytest.mark.parametrize("T", range(5))
def test_table_rows(T):
    c = solve_cournot(DUO, duo_cfg(T), OPTS, [0.0], [0.0])
    m = solve_monopoly(DUO, duo_cfg(T), OPTS, [0.0], [0.0])
    assert c.converged and m.converged
    assert -c.objective == pytest.approx(TABLE_COURNOT[T], abs=2e-3)
    assert -m.objective == pytest.approx(TABLE_MONOPOLY[T], abs=4e-3)
    assert c.role == COURNOT and m.role == MONOPOLY and c.T == T


def test_classic_equilibria_at_zero_horizon():
    c = solve_cournot(DUO, duo_cfg(0), OPTS, [0.0], [0.0])
    m = solve_monopoly(DUO, duo_cfg(0), OPTS, [0.0], [0.0])
    assert -c.objective == pytest.approx(1 / 9, abs=1e-3)
    assert -m.objective == pytest.approx(1 / 4, abs=1e-3)


@pytest.mark.parametrize("T", range(5))
def test_duopoly_sandwich(T):
    upper, lower, gap = bracket(DUO, duo_cfg(T), OPTS, [0.0], [0.0])
    exact = duopoly_stackelberg_value(0.5)
    assert lower.objective - 1e-3 <= exact <= upper.objective + 1e-3
    assert gap >= -1e-7
    assert upper.refined


def test_bracket_gap_examples():
    assert bracket(DUO, duo_cfg(4), OPTS, [0.0], [0.0]).gap <= 1e-3
    assert bracket(DUO, duo_cfg(0), OPTS, [0.0], [0.0]).gap == pytest.approx(0.139, abs=2e-3)


def test_duopoly_gap_nonincreasing():
    gaps = [bracket(DUO, duo_cfg(T), OPTS, [0.0], [0.0]).gap for T in range(6)]
    assert all(b <= a + 1e-7 for a, b in zip(gaps, gaps[1:]))


@pytest.mark.parametrize("T", [0, 2])
def test_cournot_stationarity(T):
    rep = solve_cournot(DUO, duo_cfg(T), OPTS, [0.0], [0.0])
    g = grad_lT(DUO, duo_cfg(T), rep.x_final, rep.y_final).grad_x
    rng = np.random.default_rng(0)
    xs = rng.uniform(0, 10, size=(1000, 1))
    assert ((xs - rep.x_final) @ g).min() >= -1e-5
    assert vi_residual(DUO, duo_cfg(T), rep.x_final, rep.y_final) <= 10 * OPTS.tol


def test_braess_cournot_stationarity():
    p = make_network_design(make_braess())
    pre = PRESETS["braess"]
    cfg = DynamicsConfig("projection", 0.1, 0)
    opts = SolverOptions(alpha=pre["alpha"], beta=pre["beta"])
    rep = solve_cournot(p, cfg, opts, np.zeros(5), np.full(3, 1 / 3))
    assert rep.converged
    g = grad_lT(p, cfg, rep.x_final, rep.y_final).grad_x
    rng = np.random.default_rng(1)
    xs = np.array([p.set_x.sample(rng) for _ in range(1000)]) * rng.uniform(0, 5, size=(1000, 1))
    assert ((xs - rep.x_final) @ g).min() >= -1e-5
    assert vi_residual(p, cfg, rep.x_final, rep.y_final) <= 10 * opts.tol


def test_non_convergence_is_reported():
    rep = solve_monopoly(DUO, duo_cfg(2), SolverOptions(max_iter=5), [0.0], [0.0])
    assert not rep.converged and rep.iterations == 5


def test_determinism():
    opts = SolverOptions(record_trace=True)
    a = solve_monopoly(DUO, duo_cfg(3), opts, [0.0], [0.0])
    b = solve_monopoly(DUO, duo_cfg(3), opts, [0.0], [0.0])
    assert a.trace == b.trace and a.trace
    ma = multi_start(DUO, duo_cfg(2), OPTS, 4, seed=3)
    mb = multi_start(DUO, duo_cfg(2), OPTS, 4, seed=3, jobs=3)
    np.testing.assert_array_equal(ma.objectives, mb.objectives)


def test_multistart_duopoly_agrees():
    for seed in (0, 1):
        res = multi_start(DUO, duo_cfg(3), OPTS, 5, seed=seed)
        assert res.spread <= 1e-6
        assert res.best.objective == res.objectives.min()


def test_multistart_validation():
    with pytest.raises(ValueError):
        multi_start(DUO, duo_cfg(1), OPTS, 0)
    with pytest.raises(ValueError):
        multi_start(DUO, duo_cfg(1), OPTS, 2, which="both")


def test_adaptive_duopoly():
    res = adaptive_bracket(DUO, duo_cfg(0), OPTS, [0.0], [0.0], [0, 1, 2, 4], gap_tol=1e-3)
    assert res.converged and res.T <= 4 and res.gap <= 1e-3
    with pytest.raises(ValueError):
        adaptive_bracket(DUO, duo_cfg(0), OPTS, [0.0], [0.0], [2, 1], gap_tol=1e-3)


def test_adaptive_schedule_exhausted():
    res = adaptive_bracket(DUO, duo_cfg(0), OPTS, [0.0], [0.0], [0, 1], gap_tol=1e-9)
    assert not res.converged and len(res.history) == 2
    assert res.gap == min(h.gap for h in res.history)


def unit_params(**kw):
    base = dict(gamma=1.0, L_x=1.0, L_y=1.0, G_x=1.0, G_y=1.0, G_xy=1.0, G_yy=1.0,
                H_x=1.0, H_xy=1.0, H_yy=1.0, d_max=1.0, r=0.5)
    base.update(kw)
    return BoundParams(**base)


def test_bound_examples():
    p = unit_params()
    assert monopoly_constant(p) == 6
    assert bound_estimate(p, 2, G_l=1.0)[0] == pytest.approx(0.25)
    assert bound_estimate(p, 0, G_l=1.0)[1] == pytest.approx(9.0)
    c, m = bound_estimate(p, 200)
    assert c < 1e-50 and m < 1e-50


def test_bound_normalization():
    with pytest.raises(NormalizationError):
        bound_estimate(unit_params(gamma=0.5, r=0.5), 1)
    with pytest.raises(ValueError):
        bound_estimate(unit_params(), -1)


def _prox_bruteforce(z, t, lo, hi, n=401):
    grid = np.linspace(lo, hi, n)
    X, Y = np.meshgrid(grid[:, 0], grid[:, 1], indexing="ij")
    obj = 0.5 * ((X - z[0]) ** 2 + (Y - z[1]) ** 2) + t * np.hypot(X, Y)
    i = np.unravel_index(np.argmin(obj), obj.shape)
    return np.array([X[i], Y[i]]), obj[i]


@settings(max_examples=60, deadline=None)
@given(z=st.tuples(st.floats(-3, 3), st.floats(-3, 3)), t=st.floats(0.0, 2.0))
def test_prox_matches_grid_search(z, t):
    z = np.array(z)
    lo, hi = np.array([-1.0, 0.0]), np.array([2.0, 1.5])
    x = prox_norm_box(z, t, Box(lo, hi))
    assert np.all(x >= lo - 1e-12) and np.all(x <= hi + 1e-12)
    val = 0.5 * np.sum((x - z) ** 2) + t * np.linalg.norm(x)
    _, best = _prox_bruteforce(z, t, lo, hi)
    assert val <= best + 1e-9


def test_prox_zero_threshold():
    s = NonnegWithFixedZeros(3, frozenset({2}), cap=100.0)
    np.testing.assert_array_equal(prox_norm_box([-5.0, 0.3, 9.0], 0.5, s), np.zeros(3))
    x = prox_norm_box([3.0, 4.0, 9.0], 1.0, s)
    np.testing.assert_allclose(x, [2.4, 3.2, 0.0])


def test_leader_step_plain_projection():
    assert leader_step(DUO, np.array([0.2]), np.array([10.0]), 0.05)[0] == 0.0
    exp1 = make_quadratic_exp1()
    assert exp1.norm_weight_x == 1.0
    out = leader_step(exp1, np.zeros(4), np.zeros(4), 0.05)
    np.testing.assert_array_equal(out, np.zeros(4))
