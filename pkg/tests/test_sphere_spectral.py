import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cylinder_asymptotics.errors import ArityError, PrecisionError, UnsupportedDimensionError
from cylinder_asymptotics.sphere_spectral import (
    SphereJet, build_basis, decompose_product, eigenvalue, gradient_pairing, harmonic_dimension, hessian_traces,
    pairing_constant, pairing_term_direct, project, qk_recursion_residual, random_polynomial_coefficients,
    sphere_area, sphere_quadrature, verify_degree_bound,
)


@pytest.fixture(scope="module")
def s2():
    return build_basis(3, 6)


@pytest.fixture(scope="module")
def s3():
    return build_basis(4, 4)


def test_dimensions_match_binomial_formula():
    # dim of degree-d harmonics on S^{n-1}: C(d+n-1, n-1) - C(d+n-3, n-1)
    for n in (3, 4, 5):
        for d in range(6):
            expected = math.comb(d + n - 1, n - 1) - (math.comb(d + n - 3, n - 1) if d >= 2 else 0)
            assert harmonic_dimension(n, d) == expected


def test_eigenvalues():
    assert eigenvalue(3, 1) == 2
    assert eigenvalue(4, 1) == 3
    assert eigenvalue(3, 2) == 6


@pytest.mark.parametrize("n", [3, 4, 5])
def test_quadrature_integrates_monomials(n):
    quad = sphere_quadrature(n, 8)
    assert np.sum(quad.weights) == pytest.approx(sphere_area(n), rel=1e-13)
    # int x_1^2 x_2^2 = |S| / (n (n+2))
    vals = quad.nodes[:, 0] ** 2 * quad.nodes[:, 1] ** 2
    assert quad.weights @ vals == pytest.approx(sphere_area(n) / (n * (n + 2)), rel=1e-12)
    # odd monomials vanish
    assert abs(quad.weights @ (quad.nodes[:, 0] ** 3 * quad.nodes[:, 1])) < 1e-13


@pytest.mark.parametrize("n,L", [(3, 6), (4, 4), (5, 3)])
def test_basis_orthonormal_and_eigenfunctions(n, L):
    b = build_basis(n, L)
    assert np.max(np.abs(b.gram() - np.eye(b.size))) < 1e-12
    lap = np.einsum("qiaa->qi", b.hessians)
    assert np.max(np.abs(lap + b.values * b.eigenvalues)) < 1e-10
    assert b.size == sum(harmonic_dimension(n, d) for d in range(L + 1))


def test_degree_one_harmonics_are_coordinates(s2):
    for j, i in enumerate(s2.index_range(1)):
        keep = np.abs(s2.nodes[:, j]) > 1e-3
        ratio = s2.values[keep, i] / s2.nodes[keep, j]
        assert np.ptp(ratio) < 1e-12


def test_unsupported_dimension():
    with pytest.raises(UnsupportedDimensionError):
        build_basis(6, 2)


def test_product_decomposition_degree(s2):
    c = decompose_product(1, 4, s2)
    assert np.all(np.abs(c.coeffs[s2.degrees > 3]) < 1e-12)
    with pytest.raises(PrecisionError):
        decompose_product(s2.size - 1, s2.size - 1, s2)


def test_projection_of_polynomial_is_exact(s2):
    rng = np.random.default_rng(3)
    c = random_polynomial_coefficients(s2, 4, rng)
    proj = project(s2.values @ c, s2)
    assert np.max(np.abs(proj.coeffs - c)) < 1e-12
    assert float(proj.truncation_error) < 1e-12


def test_h_and_q_base_cases(s2):
    rng = np.random.default_rng(1)
    a, b = (SphereJet.from_coefficients(s2, random_polynomial_coefficients(s2, 2, rng)) for _ in range(2))
    assert hessian_traces([], "H", sphere_dim=2) == 2.0
    lap = np.einsum("qaa->q", a.hess)
    assert np.max(np.abs(hessian_traces([a], "H") - lap)) < 1e-12
    assert np.max(np.abs(hessian_traces([a, b], "Q") - 2 * gradient_pairing(a, b))) < 1e-12
    with pytest.raises(ArityError):
        hessian_traces([a], "Q")
    with pytest.raises(ArityError):
        hessian_traces([], "H")


def test_h_is_symmetric_in_arguments(s2):
    rng = np.random.default_rng(2)
    jets = [SphereJet.from_coefficients(s2, random_polynomial_coefficients(s2, 2, rng)) for _ in range(3)]
    base = hessian_traces(jets, "H")
    for perm in itertools.permutations(jets):
        assert np.max(np.abs(hessian_traces(list(perm), "H") - base)) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d1=st.integers(1, 3), d2=st.integers(1, 3))
def test_bilinear_degree_bounds(s2, seed, d1, d2):
    rng = np.random.default_rng(seed)
    jets = [SphereJet.from_coefficients(s2, random_polynomial_coefficients(s2, d, rng),
                                        random_polynomial_coefficients(s2, d, rng)) for d in (d1, d2)]
    for kind in ("H", "Q", "P1", "P2"):
        assert verify_degree_bound(hessian_traces(jets, kind), s2, d1 + d2)["passed"]


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_trilinear_degree_bounds_s3(s3, seed):
    rng = np.random.default_rng(seed)
    jets = [SphereJet.from_coefficients(s3, random_polynomial_coefficients(s3, 1, rng),
                                        random_polynomial_coefficients(s3, 1, rng)) for _ in range(3)]
    for kind in ("H", "Q", "P1"):
        assert verify_degree_bound(hessian_traces(jets, kind), s3, 3)["passed"]


def test_degree_bound_detects_spill(s2):
    r = verify_degree_bound(s2.values[:, 9], s2, 2)
    assert not r["passed"] and r["spill"] > 0.5
    with pytest.raises(PrecisionError):
        verify_degree_bound(s2.values[:, 0], s2, 7)


def test_pairing_constant():
    assert pairing_constant(4, 1) == 0.25
    assert pairing_constant(5, 1) == pytest.approx(1 / 12)


def test_qk_recursion_k4_and_k5():
    b = build_basis(3, 6)
    rng = np.random.default_rng(7)
    for k in (4, 5):
        jets = [SphereJet.from_coefficients(b, random_polynomial_coefficients(b, 1, rng)) for _ in range(k)]
        scale = max(1.0, float(np.max(np.abs(hessian_traces(jets, "Q")))))
        assert qk_recursion_residual(jets, b) / scale < 1e-10
        # the unit pair weight does not balance
        assert qk_recursion_residual(jets, b, literal=True) / scale > 1e-3
    with pytest.raises(ArityError):
        qk_recursion_residual(jets[:3], b)


def test_pairing_term_matches_constant_form():
    b = build_basis(3, 4)
    rng = np.random.default_rng(11)
    jets = [SphereJet.from_coefficients(b, random_polynomial_coefficients(b, 1, rng)) for _ in range(4)]
    # for k = 4 the pairing sum is sum over orderings of <g1,g2><g3,g4>
    direct = pairing_term_direct(jets)
    by_constant = 0.0
    for perm in itertools.permutations(range(4)):
        by_constant = by_constant + hessian_traces([jets[perm[0]], jets[perm[1]]], "Q") * \
            hessian_traces([jets[perm[2]], jets[perm[3]]], "Q")
    assert np.max(np.abs(direct - pairing_constant(4, 1) * by_constant)) < 1e-10
