import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cylinder_asymptotics.errors import ConeViolationError, RegimeError
from cylinder_asymptotics.pde_lab import synthesize_field
from cylinder_asymptotics.radial_core import integrate_radial, make_params
from cylinder_asymptotics.sigma_geometry import (
    FieldJets, averaged_first_integral, check_cone, convert_variables, equation_residual, first_row_split,
    gamma_k_plus, jets_from_field, lambda_matrix, linearization_split, newton_tensor, radial_jets, sigma_all,
    sigma_k_eval,
)
from cylinder_asymptotics.sphere_spectral import build_basis


def brute_sigma(lam, k):
    return sum(np.prod(c) for c in itertools.combinations(lam, k)) if k else 1.0


def sym(rng, n):
    a = rng.standard_normal((n, n))
    return 0.5 * (a + a.T)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 5))
def test_sigma_matches_brute_force(seed, n):
    M = sym(np.random.default_rng(seed), n)
    lam = np.linalg.eigvalsh(M)
    sig = sigma_all(M, n)
    sig_c = sigma_all(M.astype(complex), n)
    for k in range(n + 1):
        assert sig[k] == pytest.approx(brute_sigma(lam, k), abs=1e-10)
        assert sig_c[k].real == pytest.approx(brute_sigma(lam, k), abs=1e-10)


def test_first_row_split():
    M = sym(np.random.default_rng(4), 4)
    for k in (1, 2, 3):
        assert first_row_split(M, k) == pytest.approx(sigma_k_eval(M, k), abs=1e-12)


def test_newton_tensor_is_gradient():
    rng = np.random.default_rng(5)
    M = sym(rng, 4)
    E = sym(rng, 4)
    for k in (1, 2, 3):
        eps = 1e-6
        fd = (sigma_k_eval(M + eps * E, k) - sigma_k_eval(M - eps * E, k)) / (2 * eps)
        assert fd == pytest.approx(np.sum(newton_tensor(M, k) * E), abs=1e-7)


def test_cone():
    assert gamma_k_plus(np.eye(3), 2)
    M = np.diag([1.0, 1.0, -1.5])
    assert gamma_k_plus(M, 1) and not gamma_k_plus(M, 2)
    with pytest.raises(ConeViolationError):
        check_cone(M[None], 2, t=np.array([0.5]))


@pytest.mark.parametrize("nk", [(3, 2), (4, 2), (5, 2)])
def test_radial_profile_solves_equation(nk):
    p = make_params(*nk)
    prof = integrate_radial(p, 0.4, 0.1, (0.0, 12.0), 241)
    t = np.linspace(0.5, 11.5, 40)
    xi, xt, xtt, _ = prof.evaluate_full(t)
    j = radial_jets(xi[:, None], xt[:, None], xtt[:, None], p.n - 1)
    assert np.max(np.abs(equation_residual(j, p))) < 1e-9
    assert np.all(gamma_k_plus(lambda_matrix(j), p.k))


def test_yamabe_radial_residual():
    p = make_params(4, 1)
    prof = integrate_radial(p, 0.5, 0.0, (0.0, 10.0), 201)
    t = np.linspace(0.5, 9.5, 30)
    xi, xt, xtt, _ = prof.evaluate_full(t)
    j = radial_jets(xi[:, None], xt[:, None], xtt[:, None], 3)
    assert np.max(np.abs(equation_residual(j, p))) < 1e-9


@pytest.mark.parametrize("nk", [(3, 2), (4, 2), (3, 1)])
def test_linearization_split_identity(nk):
    p = make_params(*nk)
    prof = integrate_radial(p, 0.6, 0.0, (0.0, 14.0), 281)
    basis = build_basis(p.n, 2)
    t = prof.t[20:260:8]
    phi = synthesize_field(None, [(0.7, 0, 1, 0.05), (1.1, 0, 5, 0.03), (0.4, 0, 0, 0.02)], t, basis,
                           include_profile=False)
    Lphi, rem, direct = linearization_split(prof, jets_from_field(phi), t)
    assert np.max(np.abs(Lphi - rem.total() - direct)) < 1e-10


def test_averaged_identity_on_radial_profile():
    p = make_params(3, 2)
    prof = integrate_radial(p, 1.0, 0.0, (0.0, 20.0), 401)
    basis = build_basis(3, 2)
    t = np.linspace(1.0, 18.0, 30)
    field = synthesize_field(prof, [], t, basis)
    res = averaged_first_integral(jets_from_field(field), basis.weights, p, t)
    assert res.h_spread < 1e-9
    assert res.h == pytest.approx(prof.h, rel=1e-9)
    with pytest.raises(RegimeError):
        averaged_first_integral(jets_from_field(field), basis.weights, make_params(4, 2), t)


def test_variable_conversions_round_trip():
    t = np.linspace(-2.0, 3.0, 7)
    w = 0.3 * np.sin(t)
    v = convert_variables(w, "w", "v", 5, t)
    assert np.allclose(convert_variables(v, "v", "w", 5, t), w, atol=1e-14)
    u = convert_variables(w, "w", "u", 5, t)
    assert np.allclose(convert_variables(u, "u", "w", 5, t), w, atol=1e-13)


def test_field_jets_shift():
    z = np.zeros((2, 3))
    j = FieldJets(z, z, z, np.zeros((2, 3, 2)), np.zeros((2, 3, 2)), np.zeros((2, 3, 2, 2)))
    s = j.plus_radial(np.array([1.0, 2.0]), 0.0, 0.0)
    assert np.all(s.w[1] == 2.0)
