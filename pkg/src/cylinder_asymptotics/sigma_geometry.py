"""sigma_k algebra on the cylinder R x S^{n-1}.

Matrices are expressed in an orthonormal frame whose first vector is d/dt and
whose remaining n-1 vectors are the tangent frame of the sphere at each node.
All pointwise routines accept arrays with arbitrary leading shape and work for
complex input, which is how homogeneous pieces in a scaling parameter s are
separated (sample s on the unit circle and take an FFT).
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConeViolationError, DomainError, RegimeError, ShapeError
from .sphere_spectral import sphere_area

# sigma_j all decay to zero along asymptotically linear profiles, so the
# cone test is strict positivity rather than an absolute margin
CONE_MARGIN = 0.0


@dataclass(frozen=True)
class FieldJets:
    """w and its derivatives at sample points; grad/hess are sphere-covariant."""

    w: np.ndarray
    w_t: np.ndarray
    w_tt: np.ndarray
    grad: np.ndarray
    grad_t: np.ndarray
    hess: np.ndarray
    # 1 - w_t^2 when the caller can supply it without cancellation (w_t near 1)
    one_minus: np.ndarray = None

    def scaled(self, s):
        return FieldJets(*(s * a for a in self._parts()))

    def plus_radial(self, xi, xi_t, xi_tt):
        """Add a t-only function (broadcast along the trailing sample axis)."""
        xi, xi_t, xi_tt = (np.asarray(a)[..., None] if np.ndim(a) else a for a in (xi, xi_t, xi_tt))
        return FieldJets(self.w + xi, self.w_t + xi_t, self.w_tt + xi_tt, self.grad, self.grad_t, self.hess)

    def _parts(self):
        return (self.w, self.w_t, self.w_tt, self.grad, self.grad_t, self.hess)

    @property
    def shape(self):
        return np.shape(self.w)


def jets_from_field(field):
    """FieldJets of a CylinderField carrying coeffs, coeffs_t and coeffs_tt."""
    b = field.basis
    c, ct = field.coeffs, field.coeffs_t
    ctt = field.coeffs_tt
    if ct is None or ctt is None:
        raise ShapeError("field needs first and second t-derivative coefficients")
    return FieldJets(
        c @ b.values.T,
        ct @ b.values.T,
        ctt @ b.values.T,
        np.einsum("qia,ti->tqa", b.gradients, c),
        np.einsum("qia,ti->tqa", b.gradients, ct),
        np.einsum("qiab,ti->tqab", b.hessians, c),
    )


def radial_jets(xi, xi_t, xi_tt, m):
    xi = np.asarray(xi, dtype=float)
    z = np.zeros(xi.shape + (m,))
    return FieldJets(xi, np.asarray(xi_t) * np.ones_like(xi), np.asarray(xi_tt) * np.ones_like(xi), z, z,
                     np.zeros(xi.shape + (m, m)))


def lambda_matrix(j):
    """The matrix Lambda(w) = A + Hess w + dw (x) dw - |dw|^2/2 in the cylinder frame."""
    m = j.grad.shape[-1]
    n = m + 1
    gg = np.sum(j.grad * j.grad, axis=-1)
    lam = np.zeros(j.shape + (n, n), dtype=np.result_type(j.w, j.grad, j.hess, float))
    one_minus = 1.0 - j.w_t * j.w_t if j.one_minus is None else j.one_minus
    lam[..., 0, 0] = j.w_tt - 0.5 * one_minus - 0.5 * gg
    off = j.grad_t + j.w_t[..., None] * j.grad
    lam[..., 0, 1:] = off
    lam[..., 1:, 0] = off
    diag = 0.5 * one_minus - 0.5 * gg
    lam[..., 1:, 1:] = j.hess + j.grad[..., :, None] * j.grad[..., None, :] + diag[..., None, None] * np.eye(m)
    return lam


assemble_lambda = lambda_matrix


def _sigma_from_eigenvalues(M, k):
    lam = np.linalg.eigvalsh(M)
    sig = [np.ones(M.shape[:-2])] + [np.zeros(M.shape[:-2]) for _ in range(k)]
    for i in range(lam.shape[-1]):
        x = lam[..., i]
        for j in range(k, 0, -1):
            sig[j] = sig[j] + x * sig[j - 1]
    return sig


def sigma_all(M, k):
    """sigma_0..sigma_k of the eigenvalues of M.

    Real symmetric input goes through eigenvalues, which keeps tiny sigma_k
    accurate; complex input (used for s-expansions) uses Newton's identities
    on traces of powers, which are polynomial in the entries.
    """
    M = np.asarray(M)
    n = M.shape[-1]
    if not np.iscomplexobj(M):
        return _sigma_from_eigenvalues(M, k)
    if k > n:
        return sigma_all(M, n) + [np.zeros(M.shape[:-2], dtype=M.dtype)] * (k - n)
    power = np.broadcast_to(np.eye(n, dtype=M.dtype), M.shape).copy()
    traces = []
    for _ in range(k):
        power = power @ M
        traces.append(np.einsum("...ii->...", power))
    sig = [np.ones(M.shape[:-2], dtype=M.dtype)]
    for j in range(1, k + 1):
        acc = 0
        for i in range(1, j + 1):
            acc = acc + (-1) ** (i - 1) * sig[j - i] * traces[i - 1]
        sig.append(acc / j)
    return sig


def sigma_k_eval(M, k):
    return sigma_all(M, k)[k]


def first_row_split(M, k):
    """sigma_k(M) rebuilt as M_11 sigma_{k-1}(M_bar) + sigma_k(M with M_11 = 0).

    sigma_k is affine in the (1,1) entry with slope sigma_{k-1} of the lower block.
    """
    M = np.asarray(M)
    tilde = M.copy()
    tilde[..., 0, 0] = 0
    return M[..., 0, 0] * sigma_k_eval(M[..., 1:, 1:], k - 1) + sigma_k_eval(tilde, k)


def newton_tensor(M, k):
    """T_{k-1}(M) = sum_j (-1)^j sigma_{k-1-j}(M) M^j, the gradient of sigma_k."""
    M = np.asarray(M)
    n = M.shape[-1]
    sig = sigma_all(M, k - 1)
    power = np.broadcast_to(np.eye(n, dtype=M.dtype), M.shape).copy()
    T = np.zeros_like(power)
    for j in range(k):
        T = T + (-1) ** j * sig[k - 1 - j][..., None, None] * power
        power = power @ M
    return T


def gamma_k_plus(M, k, margin=CONE_MARGIN):
    """True where sigma_1..sigma_k are all positive."""
    sig = sigma_all(np.asarray(M, dtype=float), k)
    ok = np.ones(np.shape(sig[0]), dtype=bool)
    for j in range(1, k + 1):
        ok &= sig[j] > margin
    return ok


def relative_sigmas(M, k):
    """sigma_1..sigma_k of the eigenvalues scaled to unit mean modulus (real symmetric M)."""
    lam = np.linalg.eigvalsh(np.asarray(M, dtype=float))
    scale = np.mean(np.abs(lam), axis=-1)
    scale = np.where(scale > 0, scale, 1.0)
    lam = lam / scale[..., None]
    sig = [np.ones(lam.shape[:-1])] + [np.zeros(lam.shape[:-1]) for _ in range(k)]
    for i in range(lam.shape[-1]):
        for j in range(k, 0, -1):
            sig[j] = sig[j] + lam[..., i] * sig[j - 1]
    return sig[1:]


def cone_margin(M, k):
    sig = sigma_all(np.asarray(M, dtype=float), k)
    return np.min(np.stack([sig[j] for j in range(1, k + 1)]), axis=0)


def check_cone(M, k, t=None):
    ok = gamma_k_plus(M, k)
    if not np.all(ok):
        idx = np.unravel_index(np.argmin(ok), ok.shape)
        where = {"index": [int(i) for i in idx]}
        if t is not None:
            where["t"] = float(np.asarray(t)[idx[0]])
        raise ConeViolationError("Schouten matrix left the Gamma_k^+ cone", where)


def check_cone_resolved(M, k, t=None, floor=1e-10):
    """Cone check for solutions that approach the boundary: sigma_1..sigma_{k-1} > 0 and
    sigma_k > -floor after scaling the eigenvalues to unit mean modulus."""
    sig = relative_sigmas(M, k)
    bad = np.zeros(np.shape(sig[0]), dtype=bool)
    for s in sig[:-1]:
        bad |= s <= 0
    bad |= sig[-1] <= -floor
    if np.any(bad):
        idx = np.unravel_index(np.argmax(bad), bad.shape)
        where = {"index": [int(i) for i in idx]}
        if t is not None:
            where["t"] = float(np.asarray(t)[idx[0]])
        raise ConeViolationError("Schouten matrix left the Gamma_k^+ cone", where)


def equation_residual(j, params):
    """sigma_k(Lambda(w)) - c_k e^{-2kw}, or the Yamabe left side for k=1 (j then holds v)."""
    if params.k == 1:
        n = params.n
        lap = np.einsum("...aa->...", j.hess)
        return j.w_tt + lap - 0.25 * (n - 2) ** 2 * j.w + 0.25 * n * (n - 2) * j.w ** params.exponent
    return sigma_k_eval(lambda_matrix(j), params.k) - params.c_k * np.exp(-2 * params.k * j.w)


def sigma_jacobian(j, params):
    """Coefficients of the linearization of sigma_k(Lambda(w)) - c_k e^{-2kw} at w.

    Returns (c_tt, c_t, c_tgrad, c_grad, c_hess, c_0): the derivative in a
    direction dw is c_tt dw_tt + c_t dw_t + c_tgrad . grad dw_t + c_grad . grad dw
    + <c_hess, Hess dw> + c_0 dw.
    """
    k = params.k
    T = newton_tensor(lambda_matrix(j), k)
    t11 = T[..., 0, 0]
    t1 = T[..., 0, 1:]
    tb = T[..., 1:, 1:]
    trb = np.einsum("...aa->...", tb)
    t1w = np.sum(t1 * j.grad, axis=-1)
    c_t = t11 * j.w_t + 2.0 * t1w - trb * j.w_t
    c_grad = (
        -t11[..., None] * j.grad
        + 2.0 * t1 * j.w_t[..., None]
        + 2.0 * np.einsum("...ab,...b->...a", tb, j.grad)
        - trb[..., None] * j.grad
    )
    c_0 = 2 * k * params.c_k * np.exp(-2 * k * j.w)
    return t11, c_t, 2.0 * t1, c_grad, tb, c_0


def yamabe_jacobian(j, params):
    n = params.n
    p = params.exponent
    m = j.grad.shape[-1]
    one = np.ones_like(j.w)
    zero_v = np.zeros(j.shape + (m,))
    c_0 = -0.25 * (n - 2) ** 2 + 0.25 * n * (n - 2) * p * j.w ** (p - 1)
    return one, 0 * one, zero_v, zero_v, np.broadcast_to(np.eye(m), j.shape + (m, m)), c_0


def convert_variables(value, source, target, n, t=None):
    """Convert between u (on R^n, needs t = -ln|x|), v = |x|^{(n-2)/2}u and w."""
    value = np.asarray(value, dtype=float)
    half = (n - 2) / 2.0
    if source == target:
        return value
    if source in ("u", "v") and np.any(value <= 0):
        raise DomainError(f"{source} must be positive")
    if source == "u":
        if t is None:
            raise DomainError("u conversions need t")
        v = value * np.exp(-half * np.asarray(t))
    elif source == "v":
        v = value
    elif source == "w":
        v = np.exp(-half * value)
    else:
        raise DomainError(f"unknown variable {source!r}")
    if target == "v":
        return v
    if target == "w":
        return -np.log(v) / half
    if target == "u":
        if t is None:
            raise DomainError("u conversions need t")
        return v * np.exp(half * np.asarray(t))
    raise DomainError(f"unknown variable {target!r}")


@dataclass(frozen=True)
class LinearizationCoeffs:
    t: np.ndarray
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray

    def q(self, lam):
        return self.c - self.a * lam


def _ratio(params, xi, h):
    """e^{-n xi} / (e^{-n xi} + h), computed without overflow."""
    return 1.0 / (1.0 + h * np.exp(params.n * np.asarray(xi)))


def linearization_coefficients(profile, t=None):
    """a, b, c of L phi = phi_tt + a Lap phi + b phi_t + c phi (sigma_k) or the Yamabe analogue."""
    p = profile.params
    if t is None:
        t, xi, xt = profile.t, profile.xi, profile.xi_t
    else:
        xi, xt = profile.evaluate(t)
    n, k = p.n, p.k
    if k == 1:
        one = np.ones_like(xi)
        c = -0.25 * (n - 2) ** 2 + 0.25 * n * (n + 2) * xi ** (4.0 / (n - 2))
        return LinearizationCoeffs(np.asarray(t), one, 0 * one, c)
    E = _ratio(p, xi, profile.h)
    a = (n / k - 1.0 + n * (k - 1) / k * E) / (n - 1)
    b = xt * (2.0 - n / k - n * (k - 1) / k * E)
    one_m = 1.0 - xt * xt
    c = n * E * one_m
    return LinearizationCoeffs(np.asarray(t), a, b, c)


def normalization(params, xi_t):
    k, n = params.k, params.n
    return 2.0 ** (1 - k) * math.comb(n - 1, k - 1) * (1.0 - np.asarray(xi_t) ** 2) ** (k - 1)


def _circle_pieces(func, degree):
    """Coefficients of s^0..s^degree of a polynomial-valued func(s) by FFT on |s| = 1."""
    count = degree + 1
    s = np.exp(2j * np.pi * np.arange(count) / count)
    vals = np.stack([func(si) for si in s])
    coef = np.fft.fft(vals, axis=0) / count
    return coef.real


@dataclass(frozen=True)
class RemainderBreakdown:
    """Pieces of R(phi) at each sample.

    exponential: the e^{-2k phi} - 1 + 2k phi term; pieces[l]: the part of
    homogeneous degree l in phi (l = 2..2k); gradient_quadratic: the degree-2
    part with second derivatives of phi switched off.
    """

    exponential: np.ndarray
    pieces: dict
    gradient_quadratic: np.ndarray

    def total(self):
        return self.exponential + sum(self.pieces.values())


def _radial_parts(profile, t):
    if t is None:
        xi, xt = profile.xi, profile.xi_t
        xtt, _ = profile.derivatives()
    else:
        xi, xt, xtt, _ = profile.evaluate_full(t)
    return np.asarray(xi), np.asarray(xt), np.asarray(xtt)


def linearization_split(profile, phi, t=None):
    """(L phi, R(phi) breakdown, direct residual) for phi given as FieldJets on the profile's t samples.

    direct is the normalized equation residual of xi + phi; the identity
    L phi - R(phi) = direct holds pointwise.
    """
    p = profile.params
    xi, xt, xtt = _radial_parts(profile, t)
    co = linearization_coefficients(profile, t)
    col = lambda a: a[..., None]
    lap = np.einsum("...aa->...", phi.hess)
    if p.k == 1:
        n = p.n
        pw = p.exponent
        Lphi = phi.w_tt + lap + col(co.c) * phi.w
        v = col(xi)
        F = -0.25 * n * (n - 2) * ((v + phi.w) ** pw - v**pw - pw * v ** (pw - 1) * phi.w)
        direct = equation_residual(phi.plus_radial(xi, xt, xtt), p)
        return Lphi, RemainderBreakdown(np.zeros_like(F), {"nonlinear": F}, np.zeros_like(F)), direct
    k = p.k
    Lphi = phi.w_tt + col(co.a) * lap + col(co.b) * phi.w_t + col(co.c) * phi.w
    norm = col(normalization(p, xt))
    E = col(_ratio(p, xi, profile.h))
    expo = (p.n / (2.0 * k)) * E * col(1.0 - xt * xt) * (np.exp(-2 * k * phi.w) - 1.0 + 2 * k * phi.w)

    def sig(s, jets):
        return sigma_k_eval(lambda_matrix(jets.scaled(s).plus_radial(xi, xt, xtt)), k)

    coef = _circle_pieces(lambda s: sig(s, phi), 2 * k)
    pieces = {l: -coef[l] / norm for l in range(2, 2 * k + 1)}
    flat = FieldJets(phi.w, phi.w_t, np.zeros_like(phi.w_tt), phi.grad, np.zeros_like(phi.grad_t),
                     np.zeros_like(phi.hess))
    gq = -_circle_pieces(lambda s: sig(s, flat), 2 * k)[2] / norm
    full = phi.plus_radial(xi, xt, xtt)
    direct = (sigma_k_eval(lambda_matrix(full), k) - p.c_k * np.exp(-2 * k * full.w)) / norm
    return Lphi, RemainderBreakdown(expo, pieces, gq), direct


def sphere_mean(values, weights):
    return values @ weights / sphere_area_from_weights(weights)


def sphere_area_from_weights(weights):
    return float(np.sum(weights))


@dataclass(frozen=True)
class AveragedIdentity:
    t: np.ndarray
    h_of_t: np.ndarray
    h: float
    h_spread: float
    eta: np.ndarray
    eta_prime: np.ndarray
    eta_l: dict
    identity_residual: np.ndarray
    gamma: np.ndarray
    gamma_t: np.ndarray

    def summary(self):
        return {"h": self.h, "h_spread": self.h_spread,
                "max_identity_residual": float(np.max(np.abs(self.identity_residual)))}


def averaged_first_integral(j, weights, params, t, tail=None, check=True, degree=16):
    """Evaluate the Pohozaev-type identity slice by slice.

    h(t) = (2k/(2k-n)) mean[(n/(2k c_k)) e^{(2k-n)w} sum_a T_1a w_ta - e^{-nw}]
    is constant for a solution. The same quantity is also rebuilt from gamma,
    eta, eta' and the s-graded eta_l; identity_residual is the mismatch.
    eta_l is the part of homogeneous degree l in w - gamma. The exponential
    weight makes the series infinite; `degree` terms are kept, and the
    truncation is below roundoff once |w - gamma| is small.
    """
    if params.regime != "large" or params.k >= params.n:
        raise RegimeError("the averaged identity is used for n/2 < k < n")
    n, k, ck = params.n, params.k, params.c_k
    area = float(np.sum(weights))
    mean = lambda a: (a @ weights) / area
    lam = lambda_matrix(j)
    if check:
        check_cone_resolved(lam, k, t)

    def pohozaev_density(jets):
        L = lambda_matrix(jets)
        T = newton_tensor(L, k)
        wta = np.concatenate([jets.w_tt[..., None], jets.grad_t], axis=-1)
        return np.sum(T[..., 0, :] * wta, axis=-1), sigma_k_eval(L, k)

    tw, _ = pohozaev_density(j)
    lhs = mean(n / (2 * k * ck) * np.exp((2 * k - n) * j.w) * tw - np.exp(-n * j.w))
    h_t = 2 * k / (2 * k - n) * lhs

    gamma, gamma_t, gamma_tt = mean(j.w), mean(j.w_t), mean(j.w_tt)
    hat = FieldJets(j.w - gamma[:, None], j.w_t - gamma_t[:, None], j.w_tt - gamma_tt[:, None],
                    j.grad, j.grad_t, j.hess)
    one_m = 1.0 - gamma_t**2
    eta = mean(np.exp((2 * k - n) * hat.w)) - 1.0
    eta_p = mean(np.exp(-n * hat.w)) - 1.0

    def shifted(s):
        return hat.scaled(s).plus_radial(gamma, gamma_t, gamma_tt)

    def J(s):
        jets = shifted(s)
        tw_s, sig_s = pohozaev_density(jets)
        B = n / (2 * k * ck) * (tw_s - sig_s) - (2 * k - n) / (2 * k) * (one_m**k)[:, None]
        return mean(np.exp((2 * k - n) * s * hat.w) * B)

    coef = _circle_pieces(J, degree)
    eta_l = {l: 2 * k / (2 * k - n) * one_m ** (l - k) * coef[l] for l in range(1, degree + 1)}
    # rebuild h from the graded pieces; exact up to the FFT truncation
    sig_mean = mean(n / (2 * k * ck) * np.exp((2 * k - n) * j.w) * sigma_k_eval(lam, k))
    rebuilt = (2 * k / (2 * k - n)) * (sig_mean - mean(np.exp(-n * j.w))) + np.exp((2 * k - n) * gamma) * (
        one_m**k * (1 + eta) + sum(one_m ** (k - l) * eta_l[l] for l in eta_l))
    resid = h_t - rebuilt
    sel = slice(None) if tail is None else (t >= tail[0]) & (t <= tail[1])
    h = float(np.median(h_t[sel]))
    spread = float(np.max(np.abs(h_t[sel] - h)))
    return AveragedIdentity(np.asarray(t), h_t, h, spread, eta, eta_p, eta_l, resid, gamma, gamma_t)
