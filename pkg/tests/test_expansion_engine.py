import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cylinder_asymptotics.acceptance import synthetic_recovery
from cylinder_asymptotics.errors import InsufficientRangeError, NoiseFloorError, StageError
from cylinder_asymptotics.expansion_engine import DecayFitter, extract_expansion, fit_decay, order1_extract
from cylinder_asymptotics.pde_lab import synthesize_field
from cylinder_asymptotics.radial_core import constant_radial, integrate_radial, make_params
from cylinder_asymptotics.sphere_spectral import build_basis


@settings(max_examples=30, deadline=None)
@given(rate=st.floats(0.3, 2.0), c=st.floats(0.1, 5.0), sign=st.sampled_from([-1.0, 1.0]))
def test_fit_decay_recovers_exponential(rate, c, sign):
    t = np.linspace(0.0, 12.0, 400)
    fit = fit_decay(t, sign * c * np.exp(-rate * t))
    assert fit.rate == pytest.approx(rate, abs=1e-9)
    assert fit.coefficient == pytest.approx(sign * c, rel=1e-8)
    assert fit.spread < 1e-9


@pytest.mark.parametrize("power", [1, 2])
def test_fit_decay_picks_t_power(power):
    t = np.linspace(1.0, 20.0, 500)
    fit = fit_decay(t, 0.4 * t**power * np.exp(-0.8 * t), model="texp")
    assert fit.power == power
    assert fit.rate == pytest.approx(0.8, abs=1e-9)
    assert fit.margin > 1e6


def test_fit_decay_periodic_coefficient():
    t = np.linspace(0.0, 15.0, 600)
    period = 2.3
    y = (1.5 + 0.3 * np.cos(2 * np.pi * t / period)) * np.exp(-t)
    fit = fit_decay(t, y, model="periodic", period=period)
    assert fit.rate == pytest.approx(1.0, abs=1e-6)
    assert np.max(np.abs(fit.evaluate(t) - y) / np.exp(-t)) < 1e-3


def test_fit_decay_errors():
    t = np.linspace(0.0, 10.0, 200)
    with pytest.raises(NoiseFloorError):
        fit_decay(t, 1e-12 * np.ones_like(t))
    with pytest.raises(InsufficientRangeError):
        fit_decay(t, np.exp(-0.1 * t))
    with pytest.raises(InsufficientRangeError):
        fit_decay(t, np.exp(-t), model="periodic")


def test_decay_fitter_estimator_api():
    t = np.linspace(0.0, 10.0, 300)
    y = 2.0 * np.exp(-0.9 * t)
    est = DecayFitter()
    with pytest.raises(NoiseFloorError):
        est.predict(t)
    assert est.fit(t, y) is est
    assert est.rate_ == pytest.approx(0.9, abs=1e-10)
    assert est.score(t, y) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(est.predict(t), y, rtol=1e-9)
    assert est.set_params(model="texp").get_params()["model"] == "texp"
    with pytest.raises(ValueError):
        est.set_params(bogus=1)


@pytest.fixture(scope="module")
def yamabe_setup():
    p = make_params(3, 1)
    prof = integrate_radial(p, constant_radial(p), 0.0, (0.0, 30.0))
    return p, prof, build_basis(3, 4)


def test_synthetic_recovery():
    worst, missing, rep = synthetic_recovery()
    assert missing == 0
    assert worst < 1e-6
    assert rep.mu[:3] == pytest.approx([1.0, 2.0, math.sqrt(5.0)])


def test_order1_on_synthetic_field(yamabe_setup):
    p, prof, basis = yamabe_setup
    t = np.linspace(0.0, 20.0, 401)
    field = synthesize_field(prof, [(1.0, 0, 1, 0.3), (1.0, 0, 3, -0.1), (2.0, 0, 0, 0.05)], t, basis)
    o1 = order1_extract(field, prof, window=(1.0, 12.0))
    # around the constant solution the kernel shape is the constant v/2
    half_v = 0.5 * constant_radial(p)
    assert o1.Y[1] * half_v == pytest.approx(0.3, abs=1e-7)
    assert o1.Y[3] * half_v == pytest.approx(-0.1, abs=1e-7)
    assert o1.beta == pytest.approx(2.0, abs=1e-3)


def test_unperturbed_field_has_no_terms(yamabe_setup):
    p, prof, basis = yamabe_setup
    t = np.linspace(0.0, 20.0, 401)
    rep = extract_expansion(synthesize_field(prof, [], t, basis), prof, 1, window=(1.0, 12.0), t_powers=0)
    assert all(abs(float(term.coefficient)) < 1e-9 for term in rep.terms)
    with pytest.raises(StageError):
        extract_expansion(synthesize_field(prof, [], t, basis), prof, -1)
