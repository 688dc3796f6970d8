import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from cylinder_asymptotics.errors import ConfigError, InsufficientRangeError, RegimeError
from cylinder_asymptotics.radial_core import (
    constant_radial, first_integral, first_integral_residual, integrate_radial, large_a1, large_a2, make_params,
    middle_slope, nu_index_set, profile_from_asymptotics, radial_expansion, with_period, yamabe_energy,
)

# (3,2) from xi(0) = 1, xi_t(0) = 0: h = e - e^{-3}; a0 and the first two
# coefficients frozen from a DOP853 run at rtol 3e-14 (checked against the
# closed forms below)
H_32 = math.e - math.exp(-3.0)
A0_32 = -1.7111631708
A1_32 = 3.84332878


@pytest.fixture(scope="module")
def profile_32():
    return integrate_radial(make_params(3, 2), 1.0, 0.0, (0.0, 45.0), 4501)


def test_regimes():
    assert make_params(3, 1).regime == "yamabe"
    assert make_params(5, 2).regime == "small"
    assert make_params(4, 2).regime == "middle"
    assert make_params(3, 2).regime == "large"
    assert make_params(3, 2).rho0 == 0.5
    with pytest.raises(ConfigError):
        make_params(3, 4)
    with pytest.raises(ConfigError):
        make_params(2, 1)


def test_first_integral_value(profile_32):
    assert profile_32.h == pytest.approx(H_32, abs=1e-12)
    assert profile_32.h == pytest.approx(2.668494760, abs=1e-9)


def test_a0_is_limit_of_xi_minus_t(profile_32):
    assert profile_32.a0 == pytest.approx(A0_32, abs=1e-9)
    tail = profile_32.xi[-1] - profile_32.t[-1]
    assert tail == pytest.approx(profile_32.a0, abs=1e-8)


def test_closed_form_coefficients(profile_32):
    p = profile_32.params
    a1 = large_a1(p, profile_32.h, profile_32.a0)
    assert a1 == pytest.approx(A1_32, rel=1e-8)
    assert large_a2(p, a1) < 0
    exp = radial_expansion(profile_32, m=4)
    assert exp.a[1] == pytest.approx(a1, rel=1e-8)
    assert exp.a[2] == pytest.approx(large_a2(p, a1), rel=1e-6)
    assert exp.nu[:3] == (0.0, 0.5, 1.0)


@settings(max_examples=20, deadline=None)
@given(xi0=st.floats(-0.5, 1.5), v0=st.floats(-0.6, 0.6), nk=st.sampled_from([(3, 2), (4, 2), (5, 2), (4, 3)]))
def test_first_integral_is_conserved(xi0, v0, nk):
    p = make_params(*nk)
    # h <= 0 leaves the studied class (the trajectory can reach the cone boundary)
    assume(first_integral(p, np.array([xi0]), np.array([v0]))[0] > 0.05)
    prof = integrate_radial(p, xi0, v0, (0.0, 15.0), 301)
    assert first_integral_residual(prof) < 1e-8 * max(1.0, abs(prof.h))


def test_first_integral_formula():
    p = make_params(3, 2)
    # xi = 0, xi_t = 0: e^0 * 1 - e^0 = 0
    assert first_integral(p, np.array([0.0]), np.array([0.0]))[0] == pytest.approx(0.0, abs=1e-15)


def test_constant_solutions():
    p = make_params(3, 1)
    v = constant_radial(p)
    prof = integrate_radial(p, v, 0.0, (0.0, 10.0), 101)
    assert np.ptp(prof.xi) < 1e-12
    assert yamabe_energy(p, np.array([v]), np.array([0.0]))[0] == pytest.approx(prof.h)
    ps = make_params(5, 2)
    xi = constant_radial(ps)
    prof = integrate_radial(ps, xi, 0.0, (0.0, 10.0), 101)
    assert np.ptp(prof.xi) < 1e-10


def test_yamabe_period():
    p = make_params(3, 1)
    prof = with_period(integrate_radial(p, 0.5, 0.0, (0.0, 60.0), 6001))
    assert prof.period is not None and prof.period > 0
    t = np.linspace(5.0, 15.0, 50)
    assert np.max(np.abs(prof.evaluate(t)[0] - prof.evaluate(t + prof.period)[0])) < 1e-8


def test_period_rejected_outside_periodic_regimes(profile_32):
    with pytest.raises(RegimeError):
        with_period(profile_32)


def test_profile_from_asymptotics_round_trip(profile_32):
    p = profile_32.params
    back = profile_from_asymptotics(p, profile_32.h, profile_32.a0, (0.0, 30.0), t_seed=40.0, num=301)
    xi, _ = profile_32.evaluate(back.t)
    assert np.max(np.abs(back.xi - xi)) < 1e-8


def test_middle_slope_and_ladder():
    p = make_params(4, 2)
    prof = integrate_radial(p, 0.3, 0.2, (0.0, 45.0), 4501)
    s = middle_slope(p, prof.h)
    assert s == pytest.approx(math.sqrt(1 - math.sqrt(prof.h)), rel=1e-12)
    assert prof.xi_t[-1] == pytest.approx(s, abs=1e-8)
    iset = nu_index_set(p, prof.h, cutoff=2.0)
    assert iset.values[0] == 0.0
    assert iset.values[1] == pytest.approx(s)


def test_large_index_set_is_half_integers():
    iset = nu_index_set(make_params(3, 2), cutoff=2.0)
    assert list(iset.values) == [0.0, 0.5, 1.0, 1.5, 2.0]


def test_expansion_needs_range():
    prof = integrate_radial(make_params(3, 2), 1.0, 0.0, (0.0, 5.0), 51)
    with pytest.raises((InsufficientRangeError, RegimeError)):
        radial_expansion(prof)
