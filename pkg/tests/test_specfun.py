import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special

from sleboundary.params import derive_params
from sleboundary.specfun import (
    ReferenceValue, c_a, estimate_q_constants, expected_swallowed_mass, hitting_probability,
    interval_hit_probability, reg_lower_gamma, survival_probability, swallow_survival, two_point_u,
    two_point_u_scaled,
)

K6 = derive_params(6.0)


def _gamma_quad(s, z):
    # independent oracle: direct quadrature of the integrand
    val, _ = integrate.quad(lambda u: u ** (s - 1) * math.exp(-u), 0, z, epsabs=1e-14, epsrel=1e-13, limit=200)
    return val / math.gamma(s)


# --------------------------------------------------------------------------
# incomplete gamma


def test_gamma_zero():
    assert reg_lower_gamma(0.5, 0.0) == 0.0


def test_gamma_half_half():
    oracle = _gamma_quad(0.5, 0.5)
    assert oracle == pytest.approx(math.erf(math.sqrt(0.5)), abs=1e-12)
    assert reg_lower_gamma(0.5, 0.5) == pytest.approx(oracle, abs=1e-13)
    assert reg_lower_gamma(0.5, 0.5) == pytest.approx(0.682689, abs=1e-6)


def test_gamma_tail():
    assert reg_lower_gamma(1.0, 50.0) > 1 - 1e-12


@pytest.mark.parametrize("s", [0.0, -1.0])
def test_gamma_domain(s):
    with pytest.raises(ValueError):
        reg_lower_gamma(s, 1.0)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(0.0, 40.0))
def test_gamma_against_scipy(s, z):
    assert reg_lower_gamma(s, z) == pytest.approx(special.gammainc(s, z), abs=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.0, 20.0), st.floats(0.0, 5.0))
def test_gamma_monotone(s, z, dz):
    assert reg_lower_gamma(s, z + dz) >= reg_lower_gamma(s, z) - 1e-15


# --------------------------------------------------------------------------
# survival


def test_survival_reflection():
    # kappa = 6: h_t(1) is Brownian motion under Q, killed at 0
    oracle, _ = integrate.quad(lambda y: math.exp(-y * y / 2), 0, 1.0)
    assert survival_probability(K6, 1.0, 1.0) == pytest.approx(math.sqrt(2 / math.pi) * oracle, abs=1e-12)


def test_survival_limits():
    assert survival_probability(K6, 1.0, 1e-8) == pytest.approx(1.0, abs=1e-12)
    assert survival_probability(K6, 1.0, 1e12) < 1e-5


@given(st.floats(0.1, 10.0), st.floats(0.01, 10.0), st.floats(0.1, 10.0))
def test_survival_scaling(x, t, r):
    assert survival_probability(K6, r * x, r * r * t) == pytest.approx(survival_probability(K6, x, t), abs=1e-12)


def test_swallow_survival_is_complement_of_law():
    assert 0 < swallow_survival(K6, 1.0, 1.0) < 1


# --------------------------------------------------------------------------
# hitting probability


def test_F_zero():
    assert hitting_probability(K6, 0.0) == 0.0


def test_F_against_integral():
    a = K6.a
    pref = math.gamma(2 * a) / (math.gamma(1 - 2 * a) * math.gamma(4 * a - 1))
    for rel in (0.01, 0.3, 0.8):
        val, _ = integrate.quad(lambda u: u ** (4 * a - 2) * (1 - u) ** (-2 * a), 0, rel, limit=200)
        assert hitting_probability(K6, rel) == pytest.approx(pref * val, rel=1e-9)


@pytest.mark.parametrize("kappa", [5.0, 6.0, 7.0])
def test_F_small_rel(kappa):
    p = derive_params(kappa)
    rel = 1e-6
    ratio = hitting_probability(p, rel) / (c_a(p) * rel ** p.beta)
    assert abs(ratio - 1) <= 2 * p.a * rel * 1.01


@pytest.mark.parametrize("kappa", [5.0, 6.0, 7.0])
def test_F_near_one(kappa):
    p = derive_params(kappa)
    a = p.a
    # Beta(4a-1, 1-2a) cancels the prefactor exactly
    assert math.gamma(4 * a - 1) * math.gamma(1 - 2 * a) / math.gamma(2 * a) == pytest.approx(
        special.beta(4 * a - 1, 1 - 2 * a), rel=1e-13)
    # 1 - F(1 - delta) ~ delta^(1-2a) / ((1-2a) B), so F -> 1 but only like delta^(1-2a)
    delta = 1e-12
    tail = delta ** (1 - 2 * a) / ((1 - 2 * a) * special.beta(4 * a - 1, 1 - 2 * a))
    assert 1 - hitting_probability(p, 1 - delta) == pytest.approx(tail, rel=1e-3)


@pytest.mark.parametrize("rel", [-0.1, 1.0, 1.5])
def test_F_domain(rel):
    with pytest.raises(ValueError):
        hitting_probability(K6, rel)


@given(st.floats(0.0, 0.98), st.floats(0.0, 0.01))
def test_F_monotone(rel, dr):
    assert hitting_probability(K6, rel + dr) >= hitting_probability(K6, rel)


def test_conventions_agree_to_first_order():
    y = 1 + 1e-4
    r = interval_hit_probability(K6, 1.0, y, "right")
    l = interval_hit_probability(K6, 1.0, y, "left")
    assert abs(r / l - 1) < 1e-3
    with pytest.raises(ValueError):
        interval_hit_probability(K6, 1.0, 1.5, "middle")


# --------------------------------------------------------------------------
# c_a


def test_c_a_kappa6():
    oracle = special.gamma(2 / 3) / (special.gamma(1 / 3) * special.gamma(4 / 3))
    assert c_a(K6) == pytest.approx(oracle, rel=1e-14)
    assert c_a(K6) == pytest.approx(0.566047, abs=1e-6)


def test_c_a_limit_and_sign():
    assert c_a(derive_params(8 - 1e-9)) == pytest.approx(1.0, abs=1e-6)
    for k in np.linspace(4.05, 7.95, 20):
        assert c_a(derive_params(k)) > 0


# --------------------------------------------------------------------------
# two-point function


@pytest.mark.parametrize("kappa", [5.0, 6.0, 7.0])
def test_u_against_scipy(kappa):
    p = derive_params(kappa)
    a = p.a
    for z in (0.05, 0.3, 0.5, 0.7, 0.99):
        ref = (1 - z) ** (-p.beta) * special.hyp2f1(2 * a, 1 - 4 * a, 4 * a, 1 - z)
        assert two_point_u(p, z) == pytest.approx(ref, rel=1e-10)


def test_u_endpoint():
    assert two_point_u_scaled(K6, 1.0) == 1.0
    with pytest.raises(ValueError):
        two_point_u(K6, 0.0)


@pytest.mark.parametrize("kappa", [5.0, 6.0, 7.0])
def test_q_constants(kappa):
    p = derive_params(kappa)
    q1, q2 = estimate_q_constants(p, 10_000)
    assert 0 < q1 and np.isfinite(q2)
    z = np.linspace(1e-3, 1 - 1e-3, 400)
    u = np.array([two_point_u(p, v) for v in z])
    assert np.all(u >= q1 * (1 - 1e-12))
    assert np.all((1 - z) ** p.beta * u <= q2 * (1 + 1e-12))
    assert np.all(q2 / q1 >= (1 - z) ** p.beta)


def test_q_grid_minimum():
    with pytest.raises(ValueError):
        estimate_q_constants(K6, 100)


# --------------------------------------------------------------------------
# expected swallowed mass


def test_mass_limits():
    big = expected_swallowed_mass(K6, (1.0, 2.0), 1e12)
    assert big.value == pytest.approx((2 ** K6.d - 1) / K6.d, rel=1e-4)
    assert expected_swallowed_mass(K6, (1.0, 2.0), 1e-4).value < 1e-12
    assert expected_swallowed_mass(K6, (0.0, 1.0), math.inf).value == pytest.approx(1.5, abs=1e-14)


def test_mass_against_scipy():
    ref, _ = integrate.quad(lambda x: x ** (-K6.beta) * special.gammaincc(K6.nu, x * x / 2), 1, 2, epsabs=1e-13)
    r = expected_swallowed_mass(K6, (1.0, 2.0), 1.0)
    assert isinstance(r, ReferenceValue)
    assert abs(r.value - ref) <= max(r.abs_error_bound, 1e-11)
    assert r.value == pytest.approx(0.1364, abs=5e-5)
