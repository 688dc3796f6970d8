"""Nonradial solutions on a truncated cylinder and synthetic test fields.

The unknown is the deviation phi = w - xi_ref from a radial reference profile,
collocated at Chebyshev points in t and Galerkin-projected onto spherical
harmonics in theta. The sigma_k residual is divided by the linearization
normalization so that rows stay O(1) while sigma_k itself decays like e^{-2k t}.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import ConeViolationError, ConvergenceError, DomainError, ShapeError
from .fitting import log_linear_fit
from .radial_core import constant_radial, integrate_radial
from .sigma_geometry import (
    FieldJets,
    equation_residual,
    lambda_matrix,
    newton_tensor,
    relative_sigmas,
    sigma_jacobian,
    yamabe_jacobian,
)
from .sphere_spectral import CylinderField, build_basis, sphere_area


RESOLVE_LEVEL = 1e-8


def chebyshev_grid(T, N):
    """Nodes t_0 = 0 < ... < t_N = T and the first/second differentiation matrices."""
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.ones(N + 1)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(N + 1)
    dx = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (dx + np.eye(N + 1))
    D -= np.diag(D.sum(axis=1))
    # t = T (1 - x) / 2
    D1 = -(2.0 / T) * D
    return 0.5 * T * (1.0 - x), D1, D1 @ D1


@dataclass(frozen=True)
class BvpSpec:
    """Boundary-value problem on [0, T] x S^{n-1}.

    boundary holds the harmonic coefficients of phi(0, .) (the deviation from
    the reference profile at t = 0); phi(T, .) = 0. For Yamabe the constant mode
    is instead required to decay (phi_0(T) = phi_0'(T) = 0) and its t = 0 value
    is left free, since the radial mode around a constant does not decay.
    """

    params: object
    reference: object
    T: float
    nodes: int
    max_degree: int
    boundary: np.ndarray
    exact_degree: int = None
    initial_guess: np.ndarray = None
    tol: float = 1e-10
    max_iter: int = 30
    damping_floor: float = 1.0 / 64
    decay_mode0: bool = None

    @property
    def free_mode0(self):
        return self.params.k == 1 if self.decay_mode0 is None else self.decay_mode0


def make_bvp(params, T=24.0, nodes=96, max_degree=4, perturbation=None, xi0=None, xi_t0=0.0, **kw):
    """BvpSpec around the radial profile through (xi0, xi_t0) (the constant solution when xi0 is None).

    perturbation maps harmonic index -> coefficient of phi(0, .).
    """
    if xi0 is None:
        xi0 = constant_radial(params)
    reference = integrate_radial(params, xi0, xi_t0, (0.0, T + 1.0), num=int(4 * (T + 1)) + 1)
    basis_size = build_basis(params.n, max_degree).size
    boundary = np.zeros(basis_size)
    for idx, amp in (perturbation or {}).items():
        if not 0 <= idx < basis_size:
            raise DomainError(f"harmonic index {idx} outside the basis")
        boundary[idx] = amp
    return BvpSpec(params, reference, float(T), int(nodes), int(max_degree), boundary, **kw)


@dataclass
class SolutionCertificate:
    residual: float
    pointwise_residual: float
    history: list
    steps: list
    cone_margin: float
    top_sigma: float
    far_mismatch: float
    converged: bool
    resolved_until: float = None

    def quadratic_doublings(self):
        """Number of Newton steps where the residual exponent at least doubled."""
        r = [x for x in self.history if x > 0]
        return sum(1 for a, b in zip(r, r[1:]) if a < 1e-2 and b <= 10 * a * a)

    def to_dict(self):
        return {
            "residual": self.residual,
            "pointwise_residual": self.pointwise_residual,
            "history": list(self.history),
            "steps": list(self.steps),
            "cone_margin": self.cone_margin,
            "top_sigma": self.top_sigma,
            "far_mismatch": self.far_mismatch,
            "converged": self.converged,
            "resolved_until": self.resolved_until,
            "quadratic_doublings": self.quadratic_doublings(),
        }


@dataclass
class CylinderSolution:
    """Chebyshev-collocated deviation phi from the reference profile."""

    spec: BvpSpec
    basis: object
    t_nodes: np.ndarray
    phi_nodes: np.ndarray
    certificate: SolutionCertificate = None
    _series: object = field(default=None, repr=False)

    @property
    def params(self):
        return self.spec.params

    @property
    def reference(self):
        return self.spec.reference

    def _cheb(self):
        if self._series is None:
            x = 1.0 - 2.0 * self.t_nodes / self.spec.T
            N = len(x) - 1
            V = cheb.chebvander(x, N)
            self._series = np.linalg.solve(V, self.phi_nodes)
        return self._series

    def perturbation(self, t):
        """phi on an arbitrary t grid, with exact t-derivatives of the interpolant."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-12) or np.any(t > self.spec.T + 1e-12):
            raise DomainError("t outside [0, T]")
        x = 1.0 - 2.0 * t / self.spec.T
        a = self._cheb()
        d1 = cheb.chebder(a, 1, axis=0) * (-2.0 / self.spec.T)
        d2 = cheb.chebder(a, 2, axis=0) * (4.0 / self.spec.T**2)
        return CylinderField(t, self.basis, _chebval_columns(x, a), _chebval_columns(x, d1), _chebval_columns(x, d2))

    def field(self, t):
        """w = xi_ref + phi (or v for Yamabe) on the t grid."""
        phi = self.perturbation(t)
        xi, xt, xtt, _ = self.reference.evaluate_full(phi.t)
        x0 = math.sqrt(sphere_area(self.basis.n))
        c, ct, ctt = phi.coeffs.copy(), phi.coeffs_t.copy(), phi.coeffs_tt.copy()
        c[:, 0] += xi * x0
        ct[:, 0] += xt * x0
        ctt[:, 0] += xtt * x0
        return CylinderField(phi.t, self.basis, c, ct, ctt)

    def to_rows(self):
        rows = []
        for i, ti in enumerate(self.t_nodes):
            for m in range(self.basis.size):
                rows.append((float(ti), m, float(self.phi_nodes[i, m])))
        return rows


def _chebval_columns(x, c):
    return cheb.chebval(x, c).T if c.ndim > 1 else cheb.chebval(x, c)


class _Discretization:
    def __init__(self, spec):
        p = spec.params
        self.spec = spec
        self.params = p
        exact = spec.exact_degree or max(3 * spec.max_degree + 2, 2 * spec.max_degree + 4)
        self.basis = build_basis(p.n, spec.max_degree, exact)
        self.t, self.D1, self.D2 = chebyshev_grid(spec.T, spec.nodes)
        ref = spec.reference
        self.xi, self.xi_t, self.xi_tt, _ = ref.evaluate_full(self.t)
        if p.k > 1:
            zeta = ref.solution(self.t)[1]
            self.one_minus_ref = np.exp(-2.0 * (np.abs(zeta) + np.log1p(np.exp(-2.0 * np.abs(zeta))) - math.log(2.0)))
            self.scale = 2.0 ** (1 - p.k) * math.comb(p.n - 1, p.k - 1) * self.one_minus_ref ** (p.k - 1)
        else:
            self.one_minus_ref = None
            self.scale = np.ones_like(self.t)
        b = self.basis
        self.wX = b.weights[:, None] * b.values
        if p.k > 1:
            # sigma_k of the reference is c_k e^{-2k xi} exactly; its scaled size says where
            # the sign of sigma_k is resolvable in double precision
            m = b.sphere_dim
            z = np.zeros(self.t.shape + (m,))
            ref_j = FieldJets(self.xi, self.xi_t, self.xi_tt, z, z, np.zeros(self.t.shape + (m, m)), self.one_minus_ref)
            lam = np.linalg.eigvalsh(lambda_matrix(ref_j))
            size = np.mean(np.abs(lam), axis=-1) ** p.k
            self.resolved = p.c_k * np.exp(-2 * p.k * self.xi) / size > RESOLVE_LEVEL
        else:
            self.resolved = np.ones_like(self.t, dtype=bool)

    def jets(self, C):
        b = self.basis
        Ct, Ctt = self.D1 @ C, self.D2 @ C
        phi, phi_t = C @ b.values.T, Ct @ b.values.T
        j = FieldJets(
            phi + self.xi[:, None],
            phi_t + self.xi_t[:, None],
            Ctt @ b.values.T + self.xi_tt[:, None],
            np.einsum("qia,ti->tqa", b.gradients, C),
            np.einsum("qia,ti->tqa", b.gradients, Ct),
            np.einsum("qiab,ti->tqab", b.hessians, C),
        )
        if self.one_minus_ref is not None:
            om = self.one_minus_ref[:, None] - 2.0 * self.xi_t[:, None] * phi_t - phi_t * phi_t
            j = FieldJets(j.w, j.w_t, j.w_tt, j.grad, j.grad_t, j.hess, om)
        return j

    def pointwise(self, j):
        return equation_residual(j, self.params) / self.scale[:, None]

    def project(self, values):
        return values @ self.wX

    def jacobian(self, j):
        b = self.basis
        if self.params.k == 1:
            ctt, ct, ctg, cg, ch, c0 = yamabe_jacobian(j, self.params)
        else:
            ctt, ct, ctg, cg, ch, c0 = sigma_jacobian(j, self.params)
        s = 1.0 / self.scale[:, None]
        X = b.values
        A2 = np.einsum("qm,iq,qn->imn", self.wX, ctt * s, X)
        first = (ct * s)[..., None] * X[None] + np.einsum("iqa,qna->iqn", ctg * s[..., None], b.gradients)
        A1 = np.einsum("qm,iqn->imn", self.wX, first)
        zero = (
            (c0 * s)[..., None] * X[None]
            + np.einsum("iqa,qna->iqn", cg * s[..., None], b.gradients)
            + np.einsum("iqab,qnab->iqn", ch * s[..., None, None], b.hessians)
        )
        A0 = np.einsum("qm,iqn->imn", self.wX, zero)
        N1, M = len(self.t), b.size
        J = np.einsum("imn,ij->imjn", A2, self.D2) + np.einsum("imn,ij->imjn", A1, self.D1)
        idx = np.arange(N1)
        J[idx, :, idx, :] += A0
        return J.reshape(N1 * M, N1 * M)

    def system(self, C, with_jacobian=True):
        spec = self.spec
        j = self.jets(C)
        point = self.pointwise(j)
        F = self.project(point)
        F[0] = C[0] - spec.boundary
        F[-1] = C[-1]
        if spec.free_mode0:
            F[0, 0] = (self.D1[-1] @ C)[0]
        if not with_jacobian:
            return F, point, j
        N1, M = C.shape
        J = self.jacobian(j).reshape(N1, M, N1, M)
        J[0] = 0.0
        J[-1] = 0.0
        for m in range(M):
            J[0, m, 0, m] = 1.0
            J[-1, m, -1, m] = 1.0
        if spec.free_mode0:
            J[0, 0] = 0.0
            J[0, 0, :, 0] = self.D1[-1]
        return F, point, j, J.reshape(N1 * M, N1 * M)

    def cone(self, j):
        """(inside, min scaled sigma_j for j < k, min scaled sigma_k); Yamabe: positivity of v."""
        if self.params.k == 1:
            low = float(np.min(j.w))
            return low > 0, low, low
        sig = relative_sigmas(lambda_matrix(j), self.params.k)
        low = min((float(np.min(x)) for x in sig[:-1]), default=math.inf)
        top = float(np.min(sig[-1][self.resolved]))
        return bool(low > 0 and top > 0), low, top

    def elliptic(self, j):
        """Iterate guard: sigma_1..sigma_{k-1} > 0 and a positive definite Newton tensor."""
        if self.params.k == 1:
            return bool(np.min(j.w) > 0)
        M = lambda_matrix(j)
        sig = relative_sigmas(M, self.params.k)
        if any(np.min(x) <= 0 for x in sig[:-1]):
            return False
        return bool(np.min(np.linalg.eigvalsh(newton_tensor(M, self.params.k))) > 0)


def _initial_guess(disc):
    """The reference profile itself unless a guess is given; the first Newton step then
    solves the linearized problem with the boundary data."""
    spec = disc.spec
    shape = (len(disc.t), disc.basis.size)
    if spec.initial_guess is None:
        return np.zeros(shape)
    C = np.array(spec.initial_guess, dtype=float)
    if C.shape != shape:
        raise ShapeError("initial guess has the wrong shape")
    return C


def solve_cylinder_bvp(spec):
    """Damped Newton on the collocated system; returns a CylinderSolution with its certificate."""
    p = spec.params
    disc = _Discretization(spec)
    if len(spec.boundary) != disc.basis.size:
        raise ShapeError(f"boundary needs {disc.basis.size} coefficients")
    C = _initial_guess(disc)
    F, point, j, J = disc.system(C)
    if not disc.elliptic(j):
        raise ConeViolationError("initial guess is outside the admissible cone")
    norm = float(np.max(np.abs(F)))
    history, steps = [norm], []
    converged = norm < spec.tol
    for _ in range(spec.max_iter):
        if converged:
            break
        delta = np.linalg.solve(J, -F.ravel()).reshape(C.shape)
        lam = 1.0
        while True:
            trial = C + lam * delta
            Ft, pt, jt = disc.system(trial, with_jacobian=False)
            inside = disc.elliptic(jt)
            tnorm = float(np.max(np.abs(Ft)))
            if inside and np.isfinite(tnorm) and (tnorm < (1.0 - 1e-4 * lam) * norm or tnorm < spec.tol):
                break
            lam *= 0.5
            if lam < spec.damping_floor:
                if not inside:
                    raise ConeViolationError("Newton step loses ellipticity even after damping",
                                             {"history": history})
                # a stalled step at the roundoff floor is accepted once and ends the iteration
                if norm < 1e3 * spec.tol:
                    trial, Ft, jt, tnorm = C, F, j, norm
                    break
                raise ConvergenceError(f"line search failed at residual {norm:.3e}", {"history": history})
        steps.append(lam)
        step_size = float(np.max(np.abs(trial - C)))
        C = trial
        F, point, j, J = disc.system(C)
        norm = float(np.max(np.abs(F)))
        history.append(norm)
        converged = norm < spec.tol or (step_size < 1e-14 and norm < 1e3 * spec.tol)
    if not converged:
        raise ConvergenceError(f"Newton did not reach {spec.tol:g}", {"history": history})
    inside, margin, ratio = disc.cone(j)
    if not inside:
        raise ConeViolationError("converged solution is outside Gamma_k^+", {"margins": [margin, ratio]})
    tail = disc.t > 0.9 * spec.T
    far = float(np.max(np.abs(C[tail] @ disc.basis.values.T)))
    cert = SolutionCertificate(norm, float(np.max(np.abs(point[1:-1]))), history, steps, margin, ratio, far, True,
                               float(np.max(disc.t[disc.resolved])))
    return CylinderSolution(spec, disc.basis, disc.t, C, cert)


def _term_jets(rate, power, t):
    """t^j e^{-rate t} and its first two derivatives."""
    j = power
    e = np.exp(-rate * t)
    tj = t**j
    tj1 = j * t ** (j - 1) if j >= 1 else 0.0 * t
    tj2 = j * (j - 1) * t ** (j - 2) if j >= 2 else 0.0 * t
    return tj * e, (tj1 - rate * tj) * e, (tj2 - 2 * rate * tj1 + rate * rate * tj) * e


def synthesize_field(profile, terms, t, basis, include_profile=True):
    """profile + sum of c * t^j e^{-mu t} X_index with exact t-derivatives.

    terms: (mu, j, index, coefficient); the coefficient is a number or a
    callable returning (c, c_t, c_tt) at t (for periodic coefficients).
    """
    t = np.asarray(t, dtype=float)
    M = basis.size
    c = np.zeros((t.size, M))
    ct = np.zeros_like(c)
    ctt = np.zeros_like(c)
    if include_profile and profile is not None:
        xi, xt, xtt, _ = profile.evaluate_full(t)
        x0 = math.sqrt(sphere_area(basis.n))
        c[:, 0] += xi * x0
        ct[:, 0] += xt * x0
        ctt[:, 0] += xtt * x0
    for mu, j, idx, coef in terms:
        if not 0 <= idx < M:
            raise DomainError(f"harmonic index {idx} outside the basis")
        f, ft, ftt = _term_jets(float(mu), int(j), t)
        if callable(coef):
            a, at, att = coef(t)
        else:
            a, at, att = float(coef), 0.0, 0.0
        c[:, idx] += a * f
        ct[:, idx] += at * f + a * ft
        ctt[:, idx] += att * f + 2 * at * ft + a * ftt
    return CylinderField(t, basis, c, ct, ctt)


@dataclass(frozen=True)
class CenteredField:
    gamma: np.ndarray
    gamma_t: np.ndarray
    gamma_tt: np.ndarray
    hat: CylinderField

    def sup_hat(self):
        return self.hat.sup_theta()

    def decay_rate(self, window=None, floor=1e-12):
        t = self.hat.t
        keep = np.ones_like(t, dtype=bool) if window is None else (t >= window[0]) & (t <= window[1])
        return log_linear_fit(t[keep], self.sup_hat()[keep], floor=floor, min_samples=10)[0]


def average_and_center(w):
    """gamma(t) = sphere average of w and hat w = w - gamma."""
    x0 = 1.0 / math.sqrt(sphere_area(w.basis.n))
    c = w.coeffs.copy()
    c[:, 0] = 0.0
    ct = None if w.coeffs_t is None else w.coeffs_t.copy()
    ctt = None if w.coeffs_tt is None else w.coeffs_tt.copy()
    g_t = g_tt = None
    if ct is not None:
        g_t = ct[:, 0] * x0
        ct[:, 0] = 0.0
    if ctt is not None:
        g_tt = ctt[:, 0] * x0
        ctt[:, 0] = 0.0
    return CenteredField(w.coeffs[:, 0] * x0, g_t, g_tt, CylinderField(w.t, w.basis, c, ct, ctt))
