import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgreen.quadrature import (GAUSS_WEIGHTS, KRONROD_WEIGHTS, NODES, QuadratureError, gk15,
                               integrate_intervals, integrate_log, quad, richardson_derivative)


def test_weights_sum_to_interval_length():
    assert KRONROD_WEIGHTS.sum() == pytest.approx(2.0, abs=1e-15)
    assert GAUSS_WEIGHTS.sum() == pytest.approx(2.0, abs=1e-15)
    np.testing.assert_allclose(NODES, -NODES[::-1], atol=0)


@pytest.mark.parametrize("deg", [0, 5, 13, 22])
def test_kronrod_exact_for_polynomials(deg):
    # K15 integrates degree <= 22 exactly (3n+1 with n=7)
    k, _, _ = gk15(lambda x: x**deg, np.array([0.0]), np.array([1.0]))
    assert k[0] == pytest.approx(1.0 / (deg + 1), rel=1e-14)


def test_gauss_part_exact_to_degree_13():
    _, g, _ = gk15(lambda x: x**13, np.array([0.0]), np.array([1.0]))
    assert g[0] == pytest.approx(1.0 / 14, rel=1e-14)


def test_adaptive_closed_forms():
    v, _ = quad(lambda x: np.exp(-x) * np.cos(5 * x), 0.0, 20.0)
    exact = (1 - math.exp(-20) * (math.cos(100) - 5 * math.sin(100))) / 26
    assert v == pytest.approx(exact, rel=1e-13)
    v, _ = quad(np.sqrt, 0.0, 1.0)
    assert v == pytest.approx(2.0 / 3.0, rel=1e-12)


def test_batch_matches_scalar():
    a = np.array([0.0, 1.0, 2.0])
    b = np.array([1.0, 3.0, 7.0])
    vals, errs = integrate_intervals(np.sin, a, b)
    np.testing.assert_allclose(vals, np.cos(a) - np.cos(b), rtol=1e-13, atol=1e-16)
    assert np.all(errs >= 0)


def test_log_variable_integral():
    # int_1^1e6 s^-2 ds = 1 - 1e-6
    v, _ = integrate_log(lambda s: s**-2.0, np.array([1.0]), np.array([1e6]))
    assert v[0] == pytest.approx(1.0 - 1e-6, rel=1e-13)
    with pytest.raises(ValueError):
        integrate_log(np.exp, np.array([0.0]), np.array([1.0]))


def test_failure_raises():
    with pytest.raises(QuadratureError):
        integrate_intervals(lambda x: np.sin(1.0 / x), 1e-9, 1.0, rtol=1e-14, max_depth=3)


@given(st.floats(0.1, 5.0), st.floats(0.1, 2.0))
@settings(max_examples=40, deadline=None)
def test_richardson_derivative_of_exp(x, k):
    d, err = richardson_derivative(lambda y: np.exp(k * y), x, 1e-2, levels=4)
    assert d == pytest.approx(k * math.exp(k * x), rel=1e-11)
    assert err < 1e-6 * abs(d)


def test_richardson_vectorized():
    x = np.linspace(0.1, 3.0, 7)
    d, err = richardson_derivative(np.sin, x, 1e-2, levels=4)
    np.testing.assert_allclose(d, np.cos(x), rtol=0, atol=1e-12)
    assert err.shape == x.shape
