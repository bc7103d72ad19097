import math

import numpy as np
import pytest
import scipy.integrate
from hypothesis import given
from hypothesis import strategies as st

from vsig.special import lower_inc_gamma, reg_inc_beta, varphi_n

# frozen from adaptive quadrature of the defining integrals
INC_BETA_HALF_2_3 = 11 / 16
LOWER_GAMMA_HALF_2 = 1.6918067329451982  # sqrt(pi) erf(sqrt 2)
VARPHI3_07 = 0.20044521128418816


def test_inc_beta_trivial():
    assert reg_inc_beta(0.3, 1.0, 1.0) == pytest.approx(0.3, abs=1e-15)
    for a, b in [(0.4, 2.5), (3.0, 0.2), (1.7, 1.7)]:
        assert reg_inc_beta(1.0, a, b) == pytest.approx(1.0, abs=1e-15)


def test_inc_beta_against_quadrature():
    val = scipy.integrate.quad(lambda u: u * (1 - u) ** 2, 0, 0.5)[0] * 12
    assert val == pytest.approx(INC_BETA_HALF_2_3, abs=1e-14)
    assert reg_inc_beta(0.5, 2.0, 3.0) == pytest.approx(INC_BETA_HALF_2_3, abs=1e-14)


@given(st.floats(0.0, 1.0), st.floats(0.05, 6.0), st.floats(0.05, 6.0))
def test_inc_beta_reflection(x, a, b):
    y = 1.0 - x
    x = 1.0 - y  # exact complement pair in floating point
    assert reg_inc_beta(x, a, b) + reg_inc_beta(y, b, a) == pytest.approx(1.0, abs=1e-12)


def test_lower_gamma():
    for x in [0.0, 0.3, 2.0, 11.0]:
        assert lower_inc_gamma(1.0, x) == pytest.approx(1 - math.exp(-x), abs=1e-15)
    assert lower_inc_gamma(0.5, 0.0) == 0.0
    quad = scipy.integrate.quad(lambda v: math.exp(-v) * v**-0.5, 0, 2.0)[0]
    assert quad == pytest.approx(LOWER_GAMMA_HALF_2, abs=1e-12)
    assert lower_inc_gamma(0.5, 2.0) == pytest.approx(LOWER_GAMMA_HALF_2, rel=1e-14)


@given(st.floats(0.1, 8.0), st.floats(0.0, 30.0))
def test_lower_gamma_recurrence(a, x):
    lhs = lower_inc_gamma(a + 1, x)
    rhs = a * lower_inc_gamma(a, x) - x**a * math.exp(-x)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_varphi_values():
    assert varphi_n(1.0, 1) == pytest.approx(math.e - 1, rel=1e-15)
    for n in range(1, 8):
        assert varphi_n(0.0, n) == pytest.approx(1 / math.factorial(n), rel=1e-15)
    assert varphi_n(0.7, 3) == pytest.approx(VARPHI3_07, rel=1e-14)


@given(st.floats(1e-6, 40.0), st.integers(1, 8))
def test_varphi_recurrence(delta, n):
    """delta phi_{n+1} = phi_n - 1/n!."""
    lhs = delta * varphi_n(delta, n + 1)
    rhs = varphi_n(delta, n) - 1 / math.factorial(n)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-13 * varphi_n(delta, n))


def test_domain_errors():
    with pytest.raises(ValueError):
        lower_inc_gamma(0.0, 1.0)
    with pytest.raises(ValueError):
        varphi_n(-1.0, 2)
    with pytest.raises(ValueError):
        varphi_n(1.0, 0)
