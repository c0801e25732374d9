import math

import numpy as np
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from eikopath.jets import Jet, compose_series, revert_series


def taylor(f_derivs):
    return np.array([d / math.factorial(k) for k, d in enumerate(f_derivs)])


def test_product_rule_on_polynomials():
    t = Jet.linear(2.0, 1.0, 3)
    p = t * t * t                      # t^3 about t0 = 2
    assert_allclose([p.derivative(k) for k in range(4)], [8.0, 12.0, 12.0, 6.0])


def test_elementary_functions_match_closed_form_derivatives():
    x0 = 0.7
    t = Jet.linear(x0, 1.0, 3)
    # d^k/dt^k exp(sin t)
    s, c = math.sin(x0), math.cos(x0)
    e = math.exp(s)
    expected = [e, e * c, e * (c * c - s), e * (c**3 - 3 * s * c - c)]
    got = t.sin().exp()
    assert_allclose([got.derivative(k) for k in range(4)], expected, rtol=1e-13)


def test_sqrt_log_power_consistency():
    t = Jet.linear(1.3, 1.0, 3)
    assert_allclose(t.sqrt().c, t.power(0.5).c, rtol=1e-14)
    assert_allclose((t.log() * 2.0).exp().c, (t * t).c, rtol=1e-13, atol=1e-14)
    assert_allclose((t * t.reciprocal()).c, [1.0, 0.0, 0.0, 0.0], atol=1e-15)


@given(st.floats(0.2, 3.0), st.floats(-2.0, 2.0))
def test_division_inverts_multiplication(a, b):
    t = Jet.linear(a, 1.0, 3)
    u = Jet.linear(b, 0.5, 3).exp()
    assert_allclose(((t * u) / u).c, t.c, rtol=1e-12, atol=1e-14)


def test_compose_series_matches_direct_composition():
    # outer exp about 0.4, inner 0.4 + t + t^2
    inner = np.array([0.4, 1.0, 1.0, 0.0])
    outer = taylor([math.exp(0.4)] * 4)
    direct = (Jet.linear(0.4, 1.0, 3) + Jet(np.array([0.0, 0.0, 1.0, 0.0]))).exp()
    assert_allclose(compose_series(outer, inner), direct.c, rtol=1e-14)


@given(st.floats(0.5, 2.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0))
def test_revert_series_is_an_inverse(a1, a2, a3):
    a = np.array([0.0, a1, a2, a3])
    b = revert_series(a)
    # a(b(w)) = w up to third order
    comp = compose_series(np.concatenate([[0.0], a[1:]]), b)
    assert_allclose(comp, [0.0, 1.0, 0.0, 0.0], atol=1e-12)


def test_vectorized_over_trailing_axes():
    x = np.linspace(0.1, 1.0, 5)
    t = Jet.linear(x, np.ones_like(x), 2)
    got = t.cos()
    assert_allclose(got.derivative(1), -np.sin(x))
    assert_allclose(got.derivative(2), -np.cos(x))
