"""Acceptance suite: one function per criterion, shared by the CLI and the tests.

Each criterion returns a CriterionResult made of named checks. A check marked
literal evaluates the uncorrected form of a formula known to be wrong next to
the corrected form; it is reported but does not decide the verdict. Wall-clock
times are kept out of to_dict() so reports stay byte-identical between runs;
only the budget verdict is recorded.
"""

import functools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .expansion_engine import extract_expansion, improved_radial_match, order1_extract
from .index_sets import compare_with_oracle, index_set_for, mu_sequence, rates_by_index, witness_check
from .linear_ode_kit import (classify_decay, constant_kernel, constant_operator, detect_t_power, kernel_for_mode,
                             particular_solution, predicted_rates, wronskian_weight)
from .pde_lab import make_bvp, solve_cylinder_bvp, synthesize_field
from .radial_core import (constant_radial, first_integral_residual, integrate_radial, large_a1, large_a1_literal,
                          large_a2, large_a2_literal, make_params, radial_expansion)
from .sigma_geometry import averaged_first_integral, jets_from_field, lambda_matrix, radial_jets, sigma_all
from .sphere_spectral import (CylinderField, SphereJet, build_basis, eigenvalue, hessian_traces, qk_recursion_residual,
                              random_polynomial_coefficients, verify_degree_bound)
from .fitting import log_linear_fit

FIRST_INTEGRAL_CASES = ((3, 2), (4, 2), (5, 2))
INITIAL_DATA = ((1.0, 0.0), (0.5, 0.3), (0.2, -0.2), (1.5, 0.6), (0.8, 0.1))


@dataclass(frozen=True)
class Check:
    name: str
    value: object
    bound: object
    relation: str
    passed: bool
    literal: bool = False

    def to_dict(self):
        return {"name": self.name, "value": self.value, "bound": self.bound, "relation": self.relation,
                "passed": self.passed, "literal": self.literal}


def _check(name, value, bound, relation, literal=False):
    if relation == "<":
        ok = value < bound
    elif relation == "<=":
        ok = value <= bound
    elif relation == ">=":
        ok = value >= bound
    elif relation == ">":
        ok = value > bound
    elif relation == "==":
        ok = value == bound
    elif relation == "in":
        ok = bound[0] < value < bound[1]
    else:
        raise ValueError(relation)
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    return Check(name, value, list(bound) if isinstance(bound, tuple) else bound, relation, bool(ok), literal)


@dataclass
class CriterionResult:
    number: int
    title: str
    checks: list
    budget: float = None
    seconds: float = field(default=0.0, compare=False)

    @property
    def passed(self):
        ok = all(c.passed for c in self.checks if not c.literal)
        return ok and (self.budget is None or self.seconds < self.budget)

    @property
    def literal_failures(self):
        return [c for c in self.checks if c.literal and not c.passed]

    def check(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        note = f" ({len(self.literal_failures)} literal check(s) fail as documented)" if self.literal_failures else ""
        return f"criterion {self.number}: {status} {self.title}{note}"

    def to_dict(self):
        out = {"number": self.number, "title": self.title, "passed": self.passed,
               "checks": [c.to_dict() for c in self.checks]}
        if self.budget is not None:
            out["budget_seconds"] = self.budget
            out["within_budget"] = self.seconds < self.budget
        return out


def _rel(a, b):
    return abs(a - b) / abs(b)


# ---------------------------------------------------------------- shared heavy inputs


@functools.lru_cache(maxsize=None)
def sigma_newton_solution():
    """(3,2) solution with a degree-1 boundary perturbation 0.1 X_3 around xi(0) = 1."""
    p = make_params(3, 2)
    return solve_cylinder_bvp(make_bvp(p, T=24, nodes=96, max_degree=4, perturbation={3: 0.1}, xi0=1.0, tol=1e-12))


@functools.lru_cache(maxsize=None)
def yamabe_newton_solution():
    """n = 3 Yamabe solution around the constant with boundary perturbation 0.05 X_3."""
    p = make_params(3, 1)
    return solve_cylinder_bvp(make_bvp(p, T=24, nodes=96, max_degree=4, perturbation={3: 0.05}, tol=1e-12))


def clear_caches():
    sigma_newton_solution.cache_clear()
    yamabe_newton_solution.cache_clear()


# ---------------------------------------------------------------- criteria


def first_integral_conservation(seed=0):
    checks = []
    for n, k in FIRST_INTEGRAL_CASES:
        p = make_params(n, k)
        worst = max(first_integral_residual(integrate_radial(p, x0, v0, (0.0, 30.0), 3001)) for x0, v0 in INITIAL_DATA)
        checks.append(_check(f"max first-integral drift ({n},{k})", worst, 1e-8, "<"))
    return CriterionResult(1, "first-integral conservation", checks, budget=10.0)


def radial_expansion_recursion(seed=0):
    p = make_params(3, 2)
    prof = integrate_radial(p, 1.0, 0.0, (0.0, 45.0), 4501)
    exp = radial_expansion(prof, m=4)
    a1_fit, a2_fit = exp.a[1], exp.a[2]
    a1 = large_a1(p, prof.h, prof.a0)
    checks = [
        _check("a1 relative error", _rel(a1_fit, a1), 1e-5, "<"),
        _check("a2 relative error against -a1^2 rho0/4", _rel(a2_fit, large_a2(p, a1_fit)), 1e-4, "<"),
        _check("a1 relative error, e^{+rho0 a0} exponent", _rel(a1_fit, large_a1_literal(p, prof.h, prof.a0)), 1e-5, "<",
               literal=True),
        _check("a2 relative error against +a1^2 rho0/4", _rel(a2_fit, large_a2_literal(p, a1_fit)), 1e-4, "<",
               literal=True),
    ]
    ladder = [_rel(r, 0.5 * (i + 1)) for i, r in enumerate(exp.ladder)]
    checks.append(_check("ladder worst relative error", max(ladder), 0.01, "<"))
    return CriterionResult(2, "radial expansion recursion", checks)


KERNEL_CASES = (((3, 2), (1.0, 0.0)), ((4, 2), (0.3, 0.2)))


def kernel_catalog(seed=0):
    checks = []
    for (n, k), (x0, v0) in KERNEL_CASES:
        p = make_params(n, k)
        prof = integrate_radial(p, x0, v0, (0.0, 40.0), 4001)
        basis = build_basis(n, 2)
        residual = rate_err = shape_err = 0.0
        for i in range(5):
            lam = float(eigenvalue(n, int(basis.degrees[i])))
            kb = kernel_for_mode(prof, i, lam, (2.0, 38.0))
            rep = kb.report()
            residual = max(residual, rep["residual_plus"], rep["residual_minus"])
            rho, tau = predicted_rates(p, lam, prof.h)
            for fit, exact in ((rep["rho_fit"], rho), (rep["tau_fit"], tau)):
                rate_err = max(rate_err, abs(fit - exact) / max(abs(exact), 1.0))
            tt = kb.sample(200)
            ratio = kb.wronskian(tt) / wronskian_weight(prof, tt)
            shape_err = max(shape_err, float(np.ptp(ratio) / abs(np.mean(ratio))))
        checks += [
            _check(f"kernel residual ({n},{k})", residual, 1e-8, "<"),
            _check(f"fitted rate relative error ({n},{k})", rate_err, 0.02, "<"),
            _check(f"Wronskian shape spread ({n},{k})", shape_err, 1e-6, "<"),
            _check(f"rho_1 ({n},{k})", float(predicted_rates(p, float(n - 1), prof.h)[0]), 1.0, "=="),
        ]
    return CriterionResult(3, "kernel catalog", checks)


def _strip_kernel(t, d, exact):
    """Max relative mismatch of d against exact after removing c1 e^{-t} + c2 e^{t}."""
    w = 1.0 / np.abs(exact)
    A = np.column_stack([np.exp(-t), np.exp(t)]) * w[:, None]
    sc = np.max(np.abs(A), axis=0)
    c = np.linalg.lstsq(A / sc, d * w, rcond=None)[0]
    return float(np.max(np.abs(d * w - (A / sc) @ c)))


def variation_of_parameters(seed=0):
    op = constant_operator(0.0, -1.0)
    kb = constant_kernel(op, (0.5, 30.0))
    cases = (
        ("gamma<rho", 0.5, lambda t: np.exp(-0.5 * t), lambda t: -4.0 / 3.0 * np.exp(-0.5 * t)),
        ("gamma=rho", 1.0, lambda t: np.exp(-t), lambda t: -0.5 * t * np.exp(-t)),
        ("gamma>rho", 2.0, lambda t: np.exp(-2 * t), lambda t: np.exp(-2 * t) / 3.0),
    )
    checks = []
    for name, g, f, exact in cases:
        ps = particular_solution(op, kb, f, g)
        checks.append(_check(f"residual {name}", ps.residual, 1e-8, "<"))
        checks.append(_check(f"closed-form mismatch {name}", _strip_kernel(ps.t, ps.psi - exact(ps.t), exact(ps.t)),
                             1e-8, "<"))
        if name == "gamma=rho":
            late = ps.t > 5
            checks.append(_check("resonant t-power", detect_t_power(ps.t[late], ps.psi[late], g)[0], 1, "=="))
        if name == "gamma>rho":
            psi = 0.7 * np.exp(-ps.t) + ps.psi
            checks.append(_check("projection coefficient error", abs(classify_decay(ps.t, psi, kb, g).c - 0.7),
                                 1e-8, "<"))
    return CriterionResult(4, "variation of parameters", checks)


def _random_jets(basis, degrees, rng):
    out = []
    for d in degrees:
        c = random_polynomial_coefficients(basis, d, rng)
        c_t = random_polynomial_coefficients(basis, d, rng)
        out.append(SphereJet.from_coefficients(basis, c, c_t))
    return out


def sphere_calculus(seed=0, trials=30):
    rng = np.random.default_rng(seed)
    spill = {"H": 0.0, "Q": 0.0, "P1": 0.0, "P2": 0.0, "sigma": 0.0}
    count = 0
    for n in (3, 4):
        basis = build_basis(n, 6)
        for _ in range(trials):
            arity = int(rng.integers(2, 4))
            degrees = [int(d) for d in rng.integers(1, 3, size=arity)]
            while sum(degrees) > 6:
                degrees[int(np.argmax(degrees))] -= 1
            jets = _random_jets(basis, degrees, rng)
            for kind in spill:
                if kind == "sigma":
                    continue
                r = verify_degree_bound(hessian_traces(jets, kind), basis, sum(degrees))
                spill[kind] = max(spill[kind], r["spill"])
            # sigma_l of the conformal matrix of a degree-1 field stays in degree 2l
            c, c_t, c_tt = (random_polynomial_coefficients(basis, 1, rng, 0.5) for _ in range(3))
            j = jets_from_field(CylinderField(np.zeros(1), basis, c[None], c_t[None], c_tt[None]))
            sig = sigma_all(lambda_matrix(j), 3)
            for l in (1, 2, 3):
                spill["sigma"] = max(spill["sigma"], verify_degree_bound(sig[l][0], basis, 2 * l)["spill"])
            count += 1
    checks = [_check("random inputs", count, 50, ">=")]
    checks += [_check(f"degree spill {kind}", v, 1e-8, "<") for kind, v in spill.items()]
    basis = build_basis(3, 6)
    qk = qk_lit = 0.0
    for _ in range(3):
        jets = _random_jets(basis, [1, 1, 1, 1], rng)
        scale = max(float(np.max(np.abs(hessian_traces(jets, "Q")))), 1.0)
        qk = max(qk, qk_recursion_residual(jets, basis) / scale)
        qk_lit = max(qk_lit, qk_recursion_residual(jets, basis, literal=True) / scale)
    checks.append(_check("k=4 recursion residual", qk, 1e-8, "<"))
    checks.append(_check("k=4 recursion residual, unit pair weight", qk_lit, 1e-8, "<", literal=True))
    return CriterionResult(5, "sphere calculus degree bounds", checks, budget=60.0)


def averaged_identity(seed=0):
    p = make_params(3, 2)
    sol = sigma_newton_solution()
    t = np.linspace(2.0, 16.0, 281)
    f = sol.field(t)
    ident = averaged_first_integral(jets_from_field(f), f.basis.weights, p, t, tail=(8.0, 16.0))
    checks = [_check("h spread over tail window", ident.h_spread, 1e-4, "<"),
              _check("eta_1 magnitude", float(np.max(np.abs(ident.eta_l[1]))), 1e-12, "<")]
    for l in range(2, 7):
        e = np.abs(ident.eta_l[l])
        keep = (t >= 3.0) & (t <= 14.0) & (e > 1e-14)
        if keep.sum() < 30:
            # below roundoff across the window; nothing to fit
            continue
        rate, _, _ = log_linear_fit(t[keep], e[keep], floor=1e-14)
        checks.append(_check(f"eta_{l} decay rate / {0.95 * l:.2f}", rate / (0.95 * l), 1.0, ">="))
    prof = integrate_radial(p, 1.0, 0.0, (0.0, 12.0), 61)
    basis = build_basis(3, 2)
    xi, xt, xtt, _ = prof.evaluate_full(prof.t)
    q = basis.weights.size
    J = radial_jets(np.repeat(xi[:, None], q, 1), xt[:, None] * np.ones(q), xtt[:, None] * np.ones(q), 2)
    rad = averaged_first_integral(J, basis.weights, p, prof.t)
    checks.append(_check("radial h(t) - h", float(np.max(np.abs(rad.h_of_t - prof.h))), 1e-8, "<"))
    checks.append(_check("radial identity residual", float(np.max(np.abs(rad.identity_residual))), 1e-8, "<"))
    return CriterionResult(6, "averaged first integral", checks)


def sigma_pipeline(seed=0):
    p = make_params(3, 2)
    sol = sigma_newton_solution()
    match = improved_radial_match(sol)
    o1 = order1_extract(sol, match.profile, window=match.window)
    degree_one = [i for i, v in o1.Y.items() if abs(v) > 1e-6]
    checks = [
        _check("Newton converged", sol.certificate.converged, True, "=="),
        _check("improved match rate - rho0", match.rate - p.rho0, 0.1, ">="),
        _check("degree-1 Y present", len(degree_one), 0, ">"),
        _check("beta", o1.beta, (1.0, 2.0), "in"),
        _check("beta lower bound", o1.beta, 1.2, ">="),
    ]
    return CriterionResult(7, "sigma_k order-one pipeline", checks, budget=300.0)


SYNTHETIC_TERMS = ((1.0, 0, 1, 0.3), (2.0, 0, 0, 0.05), (2.0, 1, 0, 0.02), (2.0, 0, 4, -0.07),
                   (math.sqrt(5.0), 0, 5, 0.01))


def synthetic_recovery(terms=SYNTHETIC_TERMS, order=3):
    """Worst coefficient error of a full extraction on a synthesized Yamabe field.

    Order 3 reports every rate through sqrt(5), so each synthesized term has a
    row in the table; missing counts the ones that do not.
    """
    p = make_params(3, 1)
    prof = integrate_radial(p, constant_radial(p), 0.0, (0.0, 30.0))
    basis = build_basis(3, 4)
    t = np.linspace(0.0, 20.0, 401)
    field_ = synthesize_field(prof, list(terms), t, basis)
    rep = extract_expansion(field_, prof, order, window=(1.0, 12.0), t_powers=1)
    want = {(round(mu, 9), j, i): c for mu, j, i, c in terms}
    worst = 0.0
    for term in rep.terms:
        c = want.pop((round(term.mu, 9), term.power, term.index), 0.0)
        worst = max(worst, abs(float(term.coefficient) - c))
    missing = len(want)
    return worst, missing, rep


def yamabe_pipeline(seed=0):
    sol = yamabe_newton_solution()
    prof = sol.reference
    rep = extract_expansion(sol, prof, 2, window=(2.0, 12.0))
    o1 = order1_extract(sol, prof, window=(2.0, 12.0), extra_rates=5)
    shape = rep.kernel_shape[3]
    checks = [
        _check("kernel shape coefficient nonzero", abs(shape), 1e-6, ">"),
        _check("kernel shape vs order-one extraction", abs(shape - o1.Y[3]) / abs(o1.Y[3]), 1e-6, "<"),
        _check("final residual slope / 0.95 sqrt(5)", rep.stages[-1]["rate"] / (0.95 * math.sqrt(5.0)), 1.0, ">="),
    ]
    worst, missing, _ = synthetic_recovery()
    checks.append(_check("synthetic term recovery error", worst, 1e-6, "<"))
    checks.append(_check("synthetic terms missing from the table", missing, 0, "=="))
    return CriterionResult(8, "Yamabe expansion pipeline", checks)


INDEX_CASES = ((3, 1, None), (4, 1, None), (5, 2, None), (4, 2, 0.5), (3, 2, None), (5, 3, None), (6, 4, None))


def index_set_oracle(seed=0):
    checks = []
    for n, k, h in INDEX_CASES:
        p = make_params(n, k)
        iset = index_set_for(p, 4.0, h)
        cmp = compare_with_oracle(iset, list(iset.generators))
        checks.append(_check(f"oracle discrepancies ({n},{k})", len(cmp["missing"]) + len(cmp["extra"]), 0, "=="))
        checks.append(_check(f"witness error ({n},{k})", witness_check(iset), 1e-12, "<"))
    for n in (3, 4):
        p = make_params(n, 1)
        mu = mu_sequence(index_set_for(p, 4.0))
        rows = rates_by_index(p, 2)
        expected = min(2 * float(rows[0][2]), float(rows[n][2]))
        checks.append(_check(f"mu_1 Yamabe n={n}", mu[0], 1.0, "=="))
        checks.append(_check(f"mu_2 error Yamabe n={n}", abs(mu[1] - expected), 1e-12, "<"))
    return CriterionResult(9, "index sets", checks)


CRITERIA = {
    1: first_integral_conservation,
    2: radial_expansion_recursion,
    3: kernel_catalog,
    4: variation_of_parameters,
    5: sphere_calculus,
    6: averaged_identity,
    7: sigma_pipeline,
    8: yamabe_pipeline,
    9: index_set_oracle,
}


def run_criterion(number, seed=0):
    start = time.perf_counter()
    res = CRITERIA[number](seed=seed)
    res.seconds = time.perf_counter() - start
    return res


def run_all(seed=0, numbers=None):
    return [run_criterion(i, seed) for i in (numbers or sorted(CRITERIA))]
