import math

import numpy as np
import pytest

from cylinder_asymptotics.errors import DomainError, ShapeError
from cylinder_asymptotics.pde_lab import (
    BvpSpec, average_and_center, chebyshev_grid, make_bvp, solve_cylinder_bvp, synthesize_field,
)
from cylinder_asymptotics.radial_core import integrate_radial, make_params
from cylinder_asymptotics.sigma_geometry import equation_residual, jets_from_field
from cylinder_asymptotics.sphere_spectral import build_basis, sphere_area


def test_chebyshev_differentiation_is_exact_on_polynomials():
    t, D1, D2 = chebyshev_grid(3.0, 12)
    assert t[0] == pytest.approx(0.0, abs=1e-15) and t[-1] == pytest.approx(3.0)
    f = t**5 - 2 * t**2
    assert np.max(np.abs(D1 @ f - (5 * t**4 - 4 * t))) < 1e-9
    assert np.max(np.abs(D2 @ f - (20 * t**3 - 4))) < 1e-8


def test_synthesized_derivatives_match_finite_differences():
    p = make_params(3, 2)
    prof = integrate_radial(p, 1.0, 0.0, (0.0, 10.0), 201)
    basis = build_basis(3, 2)
    t = np.linspace(2.0, 8.0, 601)
    f = synthesize_field(prof, [(1.0, 1, 2, 0.3), (0.5, 0, 4, -0.2)], t, basis)
    dt = t[1] - t[0]
    fd = np.gradient(f.coeffs, dt, axis=0)
    assert np.max(np.abs(fd - f.coeffs_t)[5:-5]) < 1e-4
    with pytest.raises(DomainError):
        synthesize_field(prof, [(1.0, 0, 99, 1.0)], t, basis)


def test_average_and_center():
    basis = build_basis(3, 2)
    t = np.linspace(0.0, 1.0, 5)
    f = synthesize_field(None, [(0.0, 0, 0, 2.0), (1.0, 0, 1, 0.5)], t, basis, include_profile=False)
    c = average_and_center(f)
    assert np.allclose(c.gamma, 2.0 / math.sqrt(sphere_area(3)))
    assert np.allclose(c.hat.coeffs[:, 0], 0.0)
    assert np.allclose(c.hat.coeffs[:, 1], 0.5 * np.exp(-t))


@pytest.fixture(scope="module")
def yamabe_solution():
    spec = make_bvp(make_params(3, 1), T=16.0, nodes=48, max_degree=2, perturbation={1: 0.05})
    return solve_cylinder_bvp(spec)


def test_yamabe_bvp_converges(yamabe_solution):
    cert = yamabe_solution.certificate
    assert cert.converged and cert.residual < 1e-10
    assert cert.quadratic_doublings() >= 1
    # boundary data is met
    phi0 = yamabe_solution.perturbation(np.array([0.0])).coeffs[0]
    assert phi0[1] == pytest.approx(0.05, abs=1e-12)


def test_yamabe_solution_solves_equation_between_nodes(yamabe_solution):
    t = np.linspace(1.0, 12.0, 23)
    w = yamabe_solution.field(t)
    res = equation_residual(jets_from_field(w), yamabe_solution.params)
    b = yamabe_solution.basis
    # the Galerkin projection vanishes off the collocation nodes too
    assert np.max(np.abs((res * b.weights) @ b.values)) < 1e-12
    # what is left is harmonic truncation, which a higher degree removes
    finer = solve_cylinder_bvp(make_bvp(make_params(3, 1), T=16.0, nodes=48, max_degree=4, perturbation={1: 0.05}))
    res4 = equation_residual(jets_from_field(finer.field(t)), finer.params)
    assert np.max(np.abs(res4)) < 1e-3 * np.max(np.abs(res))
    with pytest.raises(DomainError):
        yamabe_solution.perturbation(np.array([20.0]))


def test_sigma2_bvp_converges():
    spec = make_bvp(make_params(3, 2), T=16.0, nodes=48, max_degree=2, perturbation={1: 0.05}, xi0=1.0)
    sol = solve_cylinder_bvp(spec)
    assert sol.certificate.converged and sol.certificate.residual < 1e-10
    assert sol.certificate.cone_margin > 0
    assert len(sol.to_rows()) == sol.t_nodes.size * sol.basis.size


def test_bvp_input_checks():
    p = make_params(3, 1)
    with pytest.raises(DomainError):
        make_bvp(p, T=8.0, nodes=16, max_degree=1, perturbation={7: 0.1})
    spec = make_bvp(p, T=8.0, nodes=16, max_degree=1)
    bad = BvpSpec(spec.params, spec.reference, spec.T, spec.nodes, spec.max_degree, np.zeros(2))
    with pytest.raises(ShapeError):
        solve_cylinder_bvp(bad)
