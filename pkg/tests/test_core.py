import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stackelbridge.benchmarks import (
    build, make_braess, make_duopoly, make_network_design, make_quadratic_exp1,
    make_random_quadratic_vi,
)
from stackelbridge.core import (
    BilevelProblem, BoundParams, check_jacobians, contraction_factor, estimate_bound_params,
    eval_upper,
)
from stackelbridge.errors import AdmissibilityError, NumericalError
from stackelbridge.sets import Box


def unit_params(**kw):
    base = dict(gamma=1.0, L_x=1.0, L_y=1.0, G_x=1.0, G_y=1.0, G_xy=1.0, G_yy=1.0,
                H_x=1.0, H_xy=1.0, H_yy=1.0, d_max=1.0, r=0.5)
    base.update(kw)
    return BoundParams(**base)


@pytest.mark.parametrize("x,y,expected", [(0.5, 0.25, -0.125), (1 / 3, 1 / 3, -1 / 9), (0.0, 0.0, 0.0)])
def test_duopoly_upper(x, y, expected):
    assert eval_upper(make_duopoly(), [x], [y]) == pytest.approx(expected, abs=1e-15)


def test_nonfinite_upper_reports_inputs():
    p = dataclasses.replace(make_duopoly(), upper=lambda x, y: np.inf)
    with pytest.raises(NumericalError) as info:
        eval_upper(p, [1.0], [2.0])
    assert "x" in info.value.inputs


def test_dimension_consistency_checked():
    p = make_duopoly()
    with pytest.raises(ValueError):
        dataclasses.replace(p, dim_x=2)
    with pytest.raises(ValueError):
        dataclasses.replace(p, norm_weight_x=-1.0)


def test_problem_is_frozen():
    with pytest.raises(dataclasses.FrozenInstanceError):
        make_duopoly().name = "other"


@pytest.mark.parametrize("problem", [
    make_duopoly(),
    make_quadratic_exp1(),
    make_network_design(make_braess()),
    make_network_design(make_braess(), scale_by_demand=True),
    make_random_quadratic_vi(5, 3, seed=1, set_kind="simplex"),
    make_random_quadratic_vi(4, 2, seed=2, set_kind="box"),
], ids=lambda p: p.name)
def test_benchmark_jacobians(problem):
    rep = check_jacobians(problem, samples=10)
    assert rep.passed, rep.errors
    assert rep.max_rel_error < 1e-4


@pytest.mark.parametrize("name", ["duopoly", "quad_exp1", "braess"])
def test_registry_jacobians(name):
    assert check_jacobians(build(name)).passed


def test_injected_fault_detected():
    p = make_duopoly()
    bad = dataclasses.replace(p, jac_lower_y=lambda x, y: p.jac_lower_y(x, y) + 1.0)
    rep = check_jacobians(bad)
    assert not rep.passed
    # true d f/dy = 2, injected 3
    assert rep.max_rel_error == pytest.approx(0.5, rel=1e-3)
    bad_x = dataclasses.replace(p, jac_lower_x=lambda x, y: p.jac_lower_x(x, y) + 1.0)
    assert check_jacobians(bad_x).max_rel_error == pytest.approx(1.0, rel=1e-3)


def test_degenerate_set_skips():
    p = make_duopoly()
    flat = Box(np.array([0.5]), np.array([0.5]))
    p = dataclasses.replace(p, set_x=flat)
    with pytest.warns(UserWarning):
        rep = check_jacobians(p)
    assert rep.skipped and not rep.passed


@pytest.mark.parametrize("L_y,r,expected", [(1.0, 0.5, 0.25), (1.0, 1.0, 0.0)])
def test_contraction_factor_examples(L_y, r, expected):
    assert contraction_factor(unit_params(L_y=L_y, r=r)) == pytest.approx(expected)


def test_contraction_factor_boundary_rejected():
    with pytest.raises(AdmissibilityError):
        unit_params(L_y=2.0, r=0.5)


@settings(max_examples=100, deadline=None)
@given(gamma=st.floats(0.1, 2.0), ratio=st.floats(1.0, 3.0),
       a=st.floats(0.01, 0.99), b=st.floats(0.01, 0.99))
def test_contraction_factor_shape(gamma, ratio, a, b):
    L_y = gamma * ratio
    vertex = gamma / L_y**2
    lo, hi = sorted((a, b))
    if hi - lo < 1e-6:
        return
    left = [contraction_factor(unit_params(gamma=gamma, L_y=L_y, r=vertex * t)) for t in (lo, hi)]
    right = [contraction_factor(unit_params(gamma=gamma, L_y=L_y, r=vertex * (1 + t))) for t in (lo, hi)]
    assert left[0] > left[1]
    assert right[0] < right[1]


def test_bound_params_validation():
    with pytest.raises(ValueError):
        unit_params(G_x=-1.0)
    with pytest.raises(ValueError):
        unit_params(gamma=0.0)
    assert unit_params(G_x=2.0, L_x=3.0, G_y=4.0).G_l == 14.0


def test_estimated_params_not_certified():
    p = make_random_quadratic_vi(4, 2, seed=0, set_kind="box", gamma=1.0)
    est = estimate_bound_params(p, r=0.05)
    assert not est.certified
    assert est.gamma >= 1.0 - 1e-9
    assert est.L_y == pytest.approx(np.linalg.norm(p.meta["A"], 2))
