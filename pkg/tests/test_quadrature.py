from math import factorial

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cipfem.quadrature import MAX_DEGREE, edge_quadrature, triangle_quadrature


def monomial_integral(a, b):
    # integral of x^a y^b over the reference triangle
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@pytest.mark.parametrize("d", range(MAX_DEGREE + 1))
def test_triangle_rule_exact_for_monomials(d):
    rule = triangle_quadrature(d)
    x, y = rule.cartesian.T
    for a in range(d + 1):
        for b in range(d + 1 - a):
            assert rule.weights @ (x ** a * y ** b) == pytest.approx(
                monomial_integral(a, b), abs=1e-15)


@pytest.mark.parametrize("d", range(MAX_DEGREE + 1))
def test_edge_rule_exact_for_monomials(d):
    rule = edge_quadrature(d)
    for a in range(d + 1):
        assert rule.weights @ rule.cartesian ** a == pytest.approx(1 / (a + 1), abs=1e-15)


@pytest.mark.parametrize("d", range(MAX_DEGREE + 1))
def test_points_inside_and_weights_positive(d):
    rule = triangle_quadrature(d)
    assert np.all(rule.points >= 0) and np.allclose(rule.points.sum(axis=1), 1.0)
    assert np.all(rule.weights > 0)
    assert rule.weights.sum() == pytest.approx(0.5, abs=1e-15)


def test_rule_fails_one_degree_above():
    # the collapsed Gauss rule with n points per direction is exact to 2n-1
    rule = triangle_quadrature(3)
    x, y = rule.cartesian.T
    errs = [abs(rule.weights @ (x ** a * y ** (4 - a)) - monomial_integral(a, 4 - a))
            for a in range(5)]
    assert max(errs) > 1e-8


@pytest.mark.parametrize("d", [-1, MAX_DEGREE + 1])
def test_unsupported_degree(d):
    with pytest.raises(ValueError):
        triangle_quadrature(d)
    with pytest.raises(ValueError):
        edge_quadrature(d)


@given(st.integers(0, MAX_DEGREE), st.integers(0, 2 ** 32 - 1))
def test_random_polynomials_on_mapped_triangle(d, seed):
    """Rule d agrees with the top rule on degree-d polynomials in physical coordinates."""
    rng = np.random.default_rng(seed)
    verts = rng.uniform(-1, 1, (3, 2))
    coef = rng.standard_normal((d + 1, d + 1))

    def integrate(rule):
        x = rule.points @ verts
        vals = sum(coef[a, b] * x[:, 0] ** a * x[:, 1] ** b
                   for a in range(d + 1) for b in range(d + 1 - a))
        return rule.weights @ vals

    lo, hi = integrate(triangle_quadrature(d)), integrate(triangle_quadrature(MAX_DEGREE))
    assert lo == pytest.approx(hi, rel=1e-11, abs=1e-11)
