import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cylinder_asymptotics.errors import DomainError
from cylinder_asymptotics.linear_ode_kit import (
    characteristic_roots, classify_decay, closed_form_kernel, constant_kernel, constant_operator, detect_t_power,
    floquet_kernel, kernel_for_mode, mode_operator, numeric_kernel, particular_solution, periodic_integral_structure,
    predicted_rates, wronskian_weight,
)
from cylinder_asymptotics.radial_core import constant_radial, integrate_radial, make_params, with_period


@pytest.fixture(scope="module")
def profile_32():
    return integrate_radial(make_params(3, 2), 1.0, 0.0, (0.0, 40.0), 4001)


def test_predicted_rates_large_regime():
    p = make_params(3, 2)
    # rho_d = (d + 1)/2 and tau_d = d/2 for n = 3, k = 2
    for d in range(0, 5):
        rho, tau = predicted_rates(p, float(d * (d + 1)))
        assert rho == pytest.approx((d + 1) / 2, abs=1e-14)
        assert tau == pytest.approx(d / 2, abs=1e-14)
    assert predicted_rates(p, 2.0)[0] == 1.0


def test_predicted_rates_middle_and_yamabe():
    p = make_params(4, 2)
    assert predicted_rates(p, 3.0) == (1.0, 1.0)
    assert predicted_rates(p, 8.0)[0] == pytest.approx(math.sqrt(8 / 3))
    y = make_params(3, 1)
    assert predicted_rates(y, 2.0)[0] == pytest.approx(1.0)
    assert predicted_rates(y, 6.0)[0] == pytest.approx(math.sqrt(5.0))


def test_closed_and_numeric_kernels_agree(profile_32):
    window = (2.0, 38.0)
    closed = closed_form_kernel(profile_32, 1, 2.0, window)
    numeric = numeric_kernel(mode_operator(profile_32, 2.0, 1), window, predicted_rates(profile_32.params, 2.0))
    t = np.linspace(5.0, 30.0, 60)
    ratio = numeric.plus(t)[0] / closed.plus(t)[0]
    assert np.ptp(ratio) / abs(np.mean(ratio)) < 1e-8
    assert max(closed.residuals()) < 1e-8
    assert max(numeric.residuals()) < 1e-8


def test_wronskian_shape(profile_32):
    kb = kernel_for_mode(profile_32, 4, 6.0, (2.0, 38.0))
    t = kb.sample(100)
    ratio = kb.wronskian(t) / wronskian_weight(profile_32, t)
    assert np.ptp(ratio) / abs(np.mean(ratio)) < 1e-6
    assert kb.abel_residual() < 1e-8


def test_middle_mode0_is_resonant():
    prof = integrate_radial(make_params(4, 2), 0.3, 0.2, (0.0, 40.0), 4001)
    kb = kernel_for_mode(prof, 0, 0.0, (2.0, 38.0))
    assert kb.resonant and kb.rho == 0.0
    t = kb.sample(50)
    # psi_minus - a t psi_plus stays bounded
    assert np.max(np.abs(kb.eta(t))) < 10 * abs(kb.eta(t[:1])[0]) + 1


@settings(max_examples=15, deadline=None)
@given(p=st.floats(-1.0, 1.0), q=st.floats(-3.0, -0.2))
def test_constant_kernel_rates(p, q):
    op = constant_operator(p, q)
    kb = constant_kernel(op, (0.5, 10.0))
    r1, r2 = characteristic_roots(p, q)
    assert kb.rho == pytest.approx(-r1.real, abs=1e-12)
    assert kb.tau == pytest.approx(r2.real, abs=1e-12)
    assert max(kb.residuals()) < 1e-8


def test_floquet_of_constant_operator():
    op = constant_operator(0.3, -2.0, period=1.3)
    kb = floquet_kernel(op, (1.0, 20.0))
    r = characteristic_roots(0.3, -2.0)
    assert kb.rho == pytest.approx(-r[0].real, abs=1e-8)
    assert kb.tau == pytest.approx(r[1].real, abs=1e-8)


def test_floquet_on_delaunay_profile():
    p = make_params(3, 1)
    prof = with_period(integrate_radial(p, 0.5, 0.0, (0.0, 60.0), 6001))
    kb = kernel_for_mode(prof, 1, 2.0, (1.0, 40.0))
    # translations of the Delaunay family give an exact e^{-t}-type pair; rates are real and positive
    assert kb.rho > 0 and kb.tau > 0
    assert max(kb.residuals()) < 1e-7


def test_variation_of_parameters_cases():
    op = constant_operator(0.0, -1.0)
    kb = constant_kernel(op, (0.5, 30.0))
    below = particular_solution(op, kb, lambda t: np.exp(-0.5 * t), 0.5)
    assert below.case == "below" and below.residual < 1e-8
    res = particular_solution(op, kb, lambda t: np.exp(-t), 1.0)
    assert res.case == "resonant" and res.bound_power == 1
    late = res.t > 5
    assert detect_t_power(res.t[late], res.psi[late], 1.0)[0] == 1
    above = particular_solution(op, kb, lambda t: np.exp(-2 * t), 2.0)
    assert above.case == "above"
    assert np.max(np.abs(above.psi - np.exp(-2 * above.t) / 3) * np.exp(2 * above.t)) < 1e-8
    cls = classify_decay(above.t, 0.7 * np.exp(-above.t) + above.psi, kb, 2.0)
    assert cls.c == pytest.approx(0.7, abs=1e-10)
    with pytest.raises(DomainError):
        particular_solution(op, kb, lambda t: np.exp(-t), -1.0)


def test_yamabe_constant_mode0_particular():
    p = make_params(3, 1)
    prof = integrate_radial(p, constant_radial(p), 0.0, (0.0, 40.0), 401)
    kb = kernel_for_mode(prof, 0, 0.0, (1.0, 35.0))
    ps = particular_solution(kb.op, kb, lambda t: np.exp(-2 * t), 2.0)
    # mode 0 around the constant is psi'' + psi: e^{-2t}/5 solves it
    assert np.max(np.abs(ps.psi - np.exp(-2 * ps.t) / 5) / np.exp(-2 * ps.t)) < 1e-6


def test_periodic_integral_structure():
    T = 1.7
    s = periodic_integral_structure(lambda t: np.cos(2 * np.pi * t / T), T, 1, 0.8, "decay")
    assert s.misfit < 1e-8
    s = periodic_integral_structure(lambda t: np.cos(2 * np.pi * t / T) + 0.5, T, 0, None, "monomial")
    assert s.misfit < 1e-8
    assert s.constant == pytest.approx(0.5, rel=1e-8)
