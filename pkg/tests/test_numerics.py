import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfcurves.numerics import (
    gauss_hermite_standard_normal,
    minimize_1d,
    piecewise_normal_rule,
    q_function,
    std_normal_pdf,
)


def test_q_at_zero_is_half():
    assert q_function(0.0) == 0.5


def test_q_far_tail_is_tiny_and_finite():
    v = q_function(40.0)
    assert 0.0 <= v < 1e-300


def test_q_matches_monte_carlo_at_one():
    rng = np.random.default_rng(20240611)
    z = rng.standard_normal(10_000_000)
    p = np.mean(z > 1.0)
    se = math.sqrt(p * (1 - p) / z.size)
    assert abs(q_function(1.0) - p) <= 3 * se


def test_q_rejects_nan():
    with pytest.raises(ValueError):
        q_function(float("nan"))


def test_q_is_decreasing():
    x = np.linspace(-10, 10, 2001)
    assert np.all(np.diff(q_function(x)) <= 0)


@given(st.floats(min_value=-8, max_value=8))
def test_q_reflection(x):
    assert abs(q_function(x) + q_function(-x) - 1.0) <= 1e-14


def test_pdf_values():
    assert std_normal_pdf(0.0) == pytest.approx(0.3989422804014327, abs=1e-16)
    assert std_normal_pdf(1.7) == std_normal_pdf(-1.7)
    mpmath.mp.dps = 40
    ref = float(mpmath.exp(-0.5) / mpmath.sqrt(2 * mpmath.pi))
    assert abs(std_normal_pdf(1.0) - ref) <= 1e-15 * ref


def test_gh_second_moment_order_two_exact():
    rule = gauss_hermite_standard_normal(2)
    assert rule.expect(lambda x: x**2) == pytest.approx(1.0, abs=1e-15)


def test_gh_fourth_moment():
    assert abs(gauss_hermite_standard_normal(20).expect(lambda x: x**4) - 3.0) <= 1e-12


def test_gh_abs_order_100():
    # |x| has a kink at the origin; see the decisions log for the measured error.
    rule = gauss_hermite_standard_normal(100)
    assert abs(rule.expect(np.abs) - math.sqrt(2 / math.pi)) <= 1e-6


def test_gh_abs_error_decays_algebraically():
    exact = math.sqrt(2 / math.pi)
    errs = [abs(gauss_hermite_standard_normal(n).expect(np.abs) - exact) for n in (50, 100, 200, 400)]
    assert all(b < a for a, b in zip(errs, errs[1:]))
    # the error halves with each doubling of the order
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    assert all(1.8 < r < 2.2 for r in ratios)


def test_piecewise_rule_handles_the_kink():
    rule = piecewise_normal_rule(200, [0.0])
    assert abs(rule.expect(np.abs) - math.sqrt(2 / math.pi)) <= 1e-13


@pytest.mark.parametrize("order", [1, 513, 0])
def test_gh_order_range(order):
    with pytest.raises(ValueError):
        gauss_hermite_standard_normal(order)


@given(st.integers(min_value=2, max_value=512))
@settings(max_examples=40, deadline=None)
def test_gh_rule_shape(order):
    rule = gauss_hermite_standard_normal(order)
    assert len(rule.nodes) == len(rule.weights) == rule.order == order
    assert np.all(np.diff(rule.nodes) > 0)
    # Beyond order 385 the outermost weights fall below the smallest double.
    if order <= 385:
        assert np.all(rule.weights > 0)
    else:
        assert np.all(rule.weights >= 0)
        zero = rule.weights == 0
        assert not np.any(zero[np.abs(rule.nodes) < 35])
    assert abs(rule.weights.sum() - 1.0) <= 1e-12


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=60))
@settings(max_examples=60, deadline=None)
def test_gh_even_moments(k, extra):
    order = k + 1 + extra
    rule = gauss_hermite_standard_normal(order)
    dfact = math.prod(range(2 * k - 1, 0, -2))
    assert abs(rule.expect(lambda x: x ** (2 * k)) - dfact) <= 1e-10 * dfact


@given(st.lists(st.floats(min_value=-5, max_value=5), max_size=6), st.integers(min_value=200, max_value=800))
@settings(max_examples=40, deadline=None)
def test_piecewise_rule_is_normalized(breaks, order):
    rule = piecewise_normal_rule(order, breaks)
    assert abs(rule.weights.sum() - 1.0) <= 1e-12
    assert np.all(np.diff(rule.nodes) > 0)


def test_minimize_quadratic():
    x, fx = minimize_1d(lambda x: (x - 2.0) ** 2, 0.0, 5.0, tol=1e-10)
    assert abs(x - 2.0) <= 1e-8
    assert fx <= 1e-16


def test_minimize_kink():
    x, _ = minimize_1d(lambda x: abs(x - 1.0), 0.0, 3.0, tol=1e-10)
    assert abs(x - 1.0) <= 1e-6


def test_minimize_propagates_non_finite():
    with pytest.raises(FloatingPointError):
        minimize_1d(lambda x: math.inf if x > 1 else x, 0.0, 3.0)


def test_minimize_bad_bracket():
    with pytest.raises(ValueError):
        minimize_1d(lambda x: x, 1.0, 1.0)


@given(
    st.floats(min_value=0.1, max_value=10),
    st.floats(min_value=-2, max_value=2),
    st.floats(min_value=0, max_value=1),
)
@settings(max_examples=50, deadline=None)
def test_minimize_convex_slope(a, c, b):
    tol = 1e-10
    f = lambda x: a * (x - c) ** 2 + b * (x - c) ** 4 + math.exp(0.1 * x)
    x, _ = minimize_1d(f, -5.0, 5.0, tol=tol)
    h = 1e-5
    slope = (f(x + h) - f(x - h)) / (2 * h)
    scale = max(1.0, abs(f(x)))
    assert abs(slope) <= 10 * tol * scale


def test_minimize_psi_over_t_matches_solver():
    from conftest import solved
    from rfcurves.saddle import psi

    spec, pt = solved(1.0)
    f = lambda s: psi(pt.beta, pt.q, pt.xi, math.exp(s), spec)
    s, _ = minimize_1d(f, math.log(pt.t) - 2, math.log(pt.t) + 2, tol=1e-10)
    assert abs(math.exp(s) - pt.t) <= 1e-6 * pt.t
