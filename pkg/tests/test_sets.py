import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stackelbridge.errors import ConvergenceError, DimensionError, NumericalError
from stackelbridge.sets import (
    AffineSum, Box, FullSpace, NonnegWithFixedZeros, Product, Simplex,
    product_of_simplices, project, project_dykstra, projection_jacobian,
    simplex_as_intersection,
)

from oracles import central_jacobian, simplex_qp_bruteforce

finite = st.floats(-20, 20, allow_nan=False, allow_infinity=False)


def vec(n):
    return arrays(np.float64, n, elements=finite)


SETS = {
    "full": FullSpace(4),
    "box": Box(np.array([0.0, -1.0, 0.0, 2.0]), np.array([1.0, 1.0, 5.0, 3.0])),
    "fixed_zeros": NonnegWithFixedZeros(4, frozenset({3}), cap=100.0),
    "affine": AffineSum(4, 2.0),
    "simplex": Simplex(4),
    "product": Product((Simplex(2), Simplex(2))),
}


def test_box_clamp():
    out = project(Box(np.zeros(2), np.ones(2)), [2.0, -1.0])
    np.testing.assert_array_equal(out, [1.0, 0.0])


def test_affine_sum_shift():
    np.testing.assert_allclose(project(AffineSum(3, 1.0), [0.2, 0.2, 0.2]), [1 / 3] * 3, atol=1e-15)


def test_simplex_two_dims():
    np.testing.assert_allclose(project(Simplex(2), [2.0, -1.0]), [1.0, 0.0])


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        project(Simplex(3), [1.0, 2.0])


def test_nonfinite_simplex_input():
    with pytest.raises(NumericalError):
        project(Simplex(3), [np.nan, 0.0, 1.0])


def test_fixed_zeros_and_cap():
    s = NonnegWithFixedZeros(3, frozenset({1}), cap=5.0)
    np.testing.assert_array_equal(project(s, [7.0, 2.0, -1.0]), [5.0, 0.0, 0.0])


@pytest.mark.parametrize("z,expected", [([0.5, 0.5], [0.5, 0.5]), ([2.0, -1.0], [1.0, 0.0])])
def test_dykstra_two_dims(z, expected):
    a, b = simplex_as_intersection(2)
    np.testing.assert_allclose(project_dykstra(a, b, z), expected, atol=1e-8)


def test_dykstra_matches_sort_three_dims():
    a, b = simplex_as_intersection(3)
    z = [0.9, 0.3, -0.2]
    np.testing.assert_allclose(project_dykstra(a, b, z), project(Simplex(3), z), atol=1e-8)


def test_dykstra_budget_exhausted():
    a, b = simplex_as_intersection(5)
    with pytest.raises(ConvergenceError) as info:
        project_dykstra(a, b, np.arange(5.0) * 3, max_iter=1, tol=1e-14)
    assert info.value.last_iterate is not None


def test_jacobian_examples():
    box = Box(np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(projection_jacobian(box, [0.5, 0.5]), np.eye(2))
    np.testing.assert_array_equal(projection_jacobian(box, [2.0, 0.5]), np.diag([0.0, 1.0]))
    np.testing.assert_allclose(projection_jacobian(Simplex(3), [0.6, 0.3, 0.1]), np.eye(3) - 1 / 3, atol=1e-15)
    np.testing.assert_allclose(projection_jacobian(AffineSum(3), np.ones(3)), np.eye(3) - 1 / 3)


def test_jacobian_on_bound_is_active():
    box = Box(np.zeros(2), np.ones(2))
    np.testing.assert_array_equal(projection_jacobian(box, [1.0, 0.0]), np.zeros((2, 2)))


def test_product_of_simplices_shape():
    assert isinstance(product_of_simplices([3]), Simplex)
    p = product_of_simplices([2, 3])
    assert p.dim == 5
    out = project(p, np.arange(5.0))
    assert np.isclose(out[:2].sum(), 1) and np.isclose(out[2:].sum(), 1)


@pytest.mark.parametrize("name", sorted(SETS))
@settings(max_examples=60, deadline=None)
@given(z=vec(4), w=vec(4))
def test_nonexpansive(name, z, w):
    s = SETS[name]
    lhs = np.linalg.norm(project(s, z) - project(s, w))
    assert lhs <= np.linalg.norm(z - w) + 1e-9


@settings(max_examples=200, deadline=None)
@given(z=st.integers(1, 30).flatmap(vec))
def test_simplex_output_feasible(z):
    y = project(Simplex(len(z)), z)
    assert y.min() >= -1e-10
    assert abs(y.sum() - 1) <= 1e-10


@pytest.mark.parametrize("name", sorted(SETS))
def test_jacobian_matches_finite_differences(name):
    s = SETS[name]
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 20:
        z = rng.normal(scale=2.0, size=s.dim)
        if s.kink_margin(z) < 1e-3:
            continue
        fd = central_jacobian(s.project, z)
        np.testing.assert_allclose(projection_jacobian(s, z), fd, atol=1e-5)
        checked += 1


def test_dykstra_agrees_with_sort_across_dims():
    rng = np.random.default_rng(11)
    for n in range(2, 51):
        for _ in range(4):
            z = rng.normal(scale=3.0, size=n)
            a, b = simplex_as_intersection(n)
            np.testing.assert_allclose(project_dykstra(a, b, z), project(Simplex(n), z), atol=1e-8)


@settings(max_examples=300, deadline=None)
@given(z=st.integers(1, 4).flatmap(vec))
def test_sort_matches_bruteforce_qp(z):
    np.testing.assert_allclose(project(Simplex(len(z)), z), simplex_qp_bruteforce(z), atol=1e-9)


@pytest.mark.parametrize("name", sorted(SETS))
def test_right_multiply_matches_dense(name):
    s = SETS[name]
    rng = np.random.default_rng(8)
    for _ in range(20):
        z = rng.normal(scale=2.0, size=s.dim)
        M = rng.normal(size=(3, s.dim))
        np.testing.assert_allclose(s.right_multiply(z, M), M @ projection_jacobian(s, z), atol=1e-13)
