"""Second-order linear ODEs L psi = psi'' + p psi' + q psi arising from mode projections.

Kernel functions are stored as callables t -> (psi, psi'). Closed-form kernels
additionally know psi''; for numerical kernels the residual is measured by
differencing the dense output of psi', which checks the interpolant rather than
re-evaluating the ODE right-hand side.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ClassificationError, DomainError, InsufficientRangeError, RegimeError, SingularTrajectoryError
from .fitting import log_linear_fit
from .radial_core import constant_radial, middle_slope
from .sigma_geometry import linearization_coefficients

RTOL = 1e-13
ATOL = 1e-15
RESONANCE_TOL = 1e-9
# 8th-order central stencil for a first derivative
_FD_OFFSETS = np.arange(-4, 5)
_FD_WEIGHTS = np.array([1 / 280, -4 / 105, 1 / 5, -4 / 5, 0.0, 4 / 5, -1 / 5, 4 / 105, -1 / 280])
FD_STEP = 1e-2


@dataclass(frozen=True)
class ScalarOperator:
    """L psi = psi'' + p(t) psi' + q(t) psi.

    p_inf/q_inf are the limits as t -> infinity when the coefficients converge;
    period is set when they are periodic.
    """

    p: object
    q: object
    source: str = "custom"
    mode: int = None
    lam: float = None
    p_inf: float = None
    q_inf: float = None
    period: float = None
    profile: object = field(default=None, repr=False, compare=False)

    def apply(self, t, psi, dpsi, ddpsi):
        return ddpsi + self.p(t) * dpsi + self.q(t) * psi

    def asymptotic_roots(self):
        if self.p_inf is None:
            raise RegimeError("operator has no constant limit")
        return characteristic_roots(self.p_inf, self.q_inf)

    def to_dict(self):
        return {"source": self.source, "mode": self.mode, "lambda": self.lam,
                "p_inf": self.p_inf, "q_inf": self.q_inf, "period": self.period}


def characteristic_roots(p, q):
    disc = complex(p * p - 4 * q)
    r = np.sqrt(disc)
    return (-p - r) / 2, (-p + r) / 2


def constant_operator(p, q, period=None):
    return ScalarOperator(lambda t: p + 0 * np.asarray(t, dtype=float), lambda t: q + 0 * np.asarray(t, dtype=float),
                          "constant", p_inf=float(p), q_inf=float(q), period=period)


def mode_operator(profile, lam, mode=None):
    """The projection of the linearized operator onto an eigenfunction with -Lap X = lam X."""
    params = profile.params
    n, k = params.n, params.k

    def coeffs(t):
        return linearization_coefficients(profile, np.asarray(t, dtype=float))

    if k == 1:
        p = lambda t: 0.0 * np.asarray(t, dtype=float)
        q = lambda t: coeffs(t).c - lam
        source = "yamabe"
    else:
        p = lambda t: coeffs(t).b
        q = lambda t: coeffs(t).q(lam)
        source = "sigma_k"
    p_inf = q_inf = None
    if params.regime == "large":
        p_inf = 2.0 - n / k
        q_inf = -lam * (n / k - 1.0) / (n - 1)
    elif params.regime == "middle":
        p_inf = 0.0
        q_inf = -lam * (n / k - 1.0) / (n - 1)
    elif np.ptp(profile.xi) < 1e-12:
        p_inf = float(p(profile.t[0]))
        q_inf = float(q(profile.t[0]))
    return ScalarOperator(p, q, source, mode, float(lam), p_inf, q_inf, profile.period, profile)


def predicted_rates(params, lam, h=None):
    """(rho, tau) of the projected operator from its limiting constant coefficients."""
    n, k = params.n, params.k
    if params.regime == "large":
        root = math.sqrt((n / (2 * k)) ** 2 + (n - k) / (k * (n - 1)) * (lam - n + 1))
        return root + 1 - n / (2 * k), root - (1 - n / (2 * k))
    if params.regime == "middle":
        r = math.sqrt(lam / (n - 1))
        return r, r
    if params.regime == "yamabe":
        # around the constant solution: psi'' + (n - 2 - lam) psi
        d = lam - (n - 2)
        if d <= 0:
            return 0.0, 0.0
        return math.sqrt(d), math.sqrt(d)
    xi = constant_radial(params)
    E = math.exp(-n * xi) / (math.exp(-n * xi) + (math.exp((2 * k - n) * xi) - math.exp(-n * xi)))
    a = (n / k - 1.0 + n * (k - 1) / k * E) / (n - 1)
    d = a * lam - n * E
    if d <= 0:
        return 0.0, 0.0
    return math.sqrt(d), math.sqrt(d)


def finite_difference_derivative(fn, t, h=FD_STEP):
    """d/dt of fn at t by an 8th-order central stencil."""
    t = np.asarray(t, dtype=float)
    vals = np.stack([fn(t + o * h) for o in _FD_OFFSETS])
    return np.tensordot(_FD_WEIGHTS, vals, axes=1) / h


def operator_residual(op, fn, t, second=None):
    """Pointwise |L psi| / (|psi''| + |p psi'| + |q psi|) for psi given by fn(t) -> (psi, psi')."""
    psi, dpsi = fn(t)
    if second is None:
        dd = finite_difference_derivative(lambda s: fn(s)[1], t)
    else:
        dd = second(t)
    p, q = op.p(t), op.q(t)
    res = dd + p * dpsi + q * psi
    scale = np.abs(dd) + np.abs(p * dpsi) + np.abs(q * psi)
    scale = np.where(scale > 0, scale, 1.0)
    return np.abs(res) / scale


@dataclass(frozen=True)
class KernelBasis:
    """psi_plus decays like e^{-rho t}, psi_minus grows like e^{tau t} (or like t when resonant)."""

    op: ScalarOperator
    plus: object
    minus: object
    rho: float
    tau: float
    window: tuple
    kind: str
    resonant: bool = False
    resonance_coef: float = None
    plus_second: object = field(default=None, repr=False)
    minus_second: object = field(default=None, repr=False)
    multipliers: tuple = None
    reach: float = None

    def wronskian(self, t):
        a, da = self.plus(t)
        b, db = self.minus(t)
        return a * db - da * b

    def eta(self, t):
        """psi_minus - a t psi_plus (bounded in the resonant case)."""
        if not self.resonant:
            raise RegimeError("eta is defined for the rho = tau = 0 case")
        return self.minus(t)[0] - self.resonance_coef * t * self.plus(t)[0]

    def sample(self, num=400, margin=None):
        lo, hi = self.window
        m = 5 * FD_STEP if margin is None else margin
        return np.linspace(lo + m, hi - m, num)

    def residuals(self, num=400):
        t = self.sample(num)
        rp = operator_residual(self.op, self.plus, t, self.plus_second)
        rm = operator_residual(self.op, self.minus, t, self.minus_second)
        return float(np.max(rp)), float(np.max(rm))

    def wronskian_spread(self, num=400):
        """max/min of |W| e^{(rho - tau) t} on the window."""
        t = self.sample(num)
        w = np.abs(self.wronskian(t)) * np.exp((self.rho - self.tau) * t)
        return float(np.max(w) / np.min(w))

    def abel_residual(self, num=400):
        """Relative mismatch of W' = -p W."""
        t = self.sample(num)
        dw = finite_difference_derivative(self.wronskian, t)
        w = self.wronskian(t)
        return float(np.max(np.abs(dw + self.op.p(t) * w) / np.abs(w)))

    def fitted_rates(self, fraction=0.5):
        """(rho, tau) from log-linear fits over the last `fraction` of the window."""
        lo, hi = self.window
        if self.op.period:
            # fit over whole periods so the periodic factor averages out
            span = self.op.period * max(1, math.floor(fraction * (hi - lo) / self.op.period))
            t = np.linspace(hi - span, hi, 800)
        else:
            t = np.linspace(hi - fraction * (hi - lo), hi, 800)
        a = self.plus(t)[0]
        b = self.minus(t)[0]
        if self.resonant:
            # strip the bounded part: psi_minus ~ alpha + beta t psi_plus
            A = np.column_stack([np.ones_like(t), t * a])
            alpha = np.linalg.lstsq(A, b, rcond=None)[0][0]
            b = (b - alpha) / t
        rho = log_linear_fit(t, a, floor=1e-300)[0]
        tau = -log_linear_fit(t, b, floor=1e-300)[0]
        return float(rho), float(tau)

    def report(self):
        rp, rm = self.residuals()
        fr, ft = self.fitted_rates()
        return {"mode": self.op.mode, "lambda": self.op.lam, "kind": self.kind, "rho": self.rho, "tau": self.tau,
                "rho_fit": fr, "tau_fit": ft, "residual_plus": rp, "residual_minus": rm,
                "wronskian_spread": self.wronskian_spread(), "resonant": self.resonant}


def _interval(profile, window):
    if window is None:
        window = (float(profile.t[0]) + 1.0, float(profile.t[-1]))
    lo, hi = window
    if lo < profile.t[0] or hi > profile.t[-1]:
        raise InsufficientRangeError("window exceeds the integrated profile")
    return float(lo), float(hi)


def wronskian_weight(profile, t):
    """(h + e^{-n xi})^{-(k-1)/k} e^{-(2-n/k) xi}, the shape of the sigma_k Wronskian."""
    p = profile.params
    xi, _ = profile.evaluate(t)
    return (profile.h + np.exp(-p.n * xi)) ** (-(p.k - 1) / p.k) * np.exp(-p.rho0 * xi)


def closed_form_kernel(profile, mode, lam=None, window=None):
    """Exact kernels: translation/dilation modes of asymptotically linear sigma_k profiles,
    and constant radial solutions (Yamabe or small regime)."""
    params = profile.params
    n, k = params.n, params.k
    if lam is None:
        lam = 0.0 if mode == 0 else (float(n - 1) if 1 <= mode <= n else None)
    if lam is None:
        raise RegimeError("give lam for modes beyond the first spherical degree")
    op = mode_operator(profile, lam, mode)
    win = _interval(profile, window)
    if np.ptp(profile.xi) < 1e-12 and np.max(np.abs(profile.xi_t)) < 1e-12:
        return constant_kernel(op, win)
    if params.regime not in ("middle", "large"):
        raise RegimeError("closed forms need a constant profile or n/2 <= k < n")
    if k >= n:
        raise RegimeError("closed forms need k < n")
    full = profile.evaluate_full
    if mode == 0 or lam == 0:
        return _mode0_kernel(profile, op, win)
    if abs(lam - (n - 1)) > 1e-12:
        raise RegimeError("closed forms exist for spherical degrees 0 and 1 only")

    def plus(t):
        _, xt, xtt, _ = full(t)
        e = np.exp(-t)
        return (1 + xt) * e, (xtt - 1 - xt) * e

    def plus2(t):
        _, xt, xtt, x3 = full(t)
        return (x3 - 2 * xtt + 1 + xt) * np.exp(-t)

    # 1 - xi_t is taken from the rapidity: it decays and would cancel otherwise
    def minus(t):
        _, xt, xtt, _ = full(t)
        e = np.exp(t)
        om = profile.one_minus_xi_t(t)
        return om * e, (om - xtt) * e

    def minus2(t):
        _, xt, xtt, x3 = full(t)
        return (profile.one_minus_xi_t(t) - 2 * xtt - x3) * np.exp(t)

    rho, tau = predicted_rates(params, lam, profile.h)
    return KernelBasis(op, plus, minus, rho, tau, win, "closed", False, None, plus2, minus2,
                       reach=float(profile.t[-1]))


def _cumulative(g, lo, hi, start, backward, scale_rate=0.0):
    """Dense antiderivative of g: y(t) = start + int_{lo or hi}^t g, integrated in a rescaled variable."""
    if backward:
        # z = e^{r t} int_t^hi g; z' = r z - e^{r t} g
        def rhs(t, z):
            return [scale_rate * z[0] - math.exp(scale_rate * t) * g(t)]
        z0 = [start * math.exp(scale_rate * hi)]
        sol = solve_ivp(rhs, (hi, lo), z0, method="DOP853", rtol=RTOL, atol=ATOL, dense_output=True)
    else:
        def rhs(t, z):
            return [-scale_rate * z[0] + math.exp(-scale_rate * t) * g(t)]
        z0 = [start * math.exp(-scale_rate * lo)]
        sol = solve_ivp(rhs, (lo, hi), z0, method="DOP853", rtol=RTOL, atol=ATOL, dense_output=True)
    if sol.status != 0:
        raise SingularTrajectoryError(sol.message, float(sol.t[-1]))
    sign = 1.0 if backward else -1.0

    def value(t):
        t = np.asarray(t, dtype=float)
        return sol.sol(t)[0] * np.exp(-sign * scale_rate * t)

    return value


def _mode0_kernel(profile, op, win):
    params = profile.params
    n, k = params.n, params.k
    full = profile.evaluate_full
    lo, hi = win
    G = lambda t: wronskian_weight(profile, t)

    def dG(t):
        xi, xt = profile.evaluate(t)
        e = np.exp(-n * xi)
        return G(t) * xt * ((k - 1) / k * n * e / (profile.h + e) - params.rho0)

    def ratio(t):
        _, xt = profile.evaluate(t)
        return G(t) / xt**2

    def xi_t_kernel(t):
        _, xt, xtt, _ = full(t)
        return xt, xtt

    def xi_t_second(t):
        return full(t)[3]

    if params.regime == "large":
        # psi_plus = xi_t int_t^inf G / xi_t^2; beyond the window the integrand is h^{..} e^{-rho0 xi}
        xi_hi, _ = profile.evaluate(hi)
        tail = float(G(hi) / params.rho0)
        integral = _cumulative(lambda s: float(ratio(s)), lo, hi, tail, True, params.rho0)

        def plus(t):
            _, xt, xtt, _ = full(t)
            I = integral(t)
            return xt * I, xtt * I - G(t) / xt

        def plus2(t):
            _, xt, xtt, x3 = full(t)
            I = integral(t)
            g = G(t)
            return x3 * I - xtt * g / xt**2 - (dG(t) * xt - g * xtt) / xt**2

        return KernelBasis(op, plus, xi_t_kernel, params.rho0, 0.0, win, "closed", False, None, plus2, xi_t_second,
                       reach=float(profile.t[-1]))

    # middle regime: xi_t is bounded, the second kernel grows linearly
    integral = _cumulative(lambda s: float(ratio(s)), lo, hi, 0.0, False, 0.0)

    def minus(t):
        _, xt, xtt, _ = full(t)
        I = integral(t)
        return xt * I, xtt * I + G(t) / xt

    def minus2(t):
        _, xt, xtt, x3 = full(t)
        I = integral(t)
        g = G(t)
        return x3 * I + xtt * g / xt**2 + (dG(t) * xt - g * xtt) / xt**2

    s = middle_slope(params, profile.h)
    a = profile.h ** (-(k - 1) / k) / s**2
    return KernelBasis(op, xi_t_kernel, minus, 0.0, 0.0, win, "closed", True, a, xi_t_second, minus2,
                       reach=float(profile.t[-1]))


def constant_kernel(op, window):
    """Kernel of a constant-coefficient operator from its characteristic roots."""
    p, q = op.p_inf, op.q_inf
    r1, r2 = characteristic_roots(p, q)
    if abs(r1.imag) > 1e-14:
        if abs(r1.real) > 1e-14:
            raise ClassificationError("oscillating kernel with exponential envelope")
        w = abs(r1.imag)
        plus = lambda t: (np.cos(w * t), -w * np.sin(w * t))
        minus = lambda t: (np.sin(w * t), w * np.cos(w * t))
        return KernelBasis(op, plus, minus, 0.0, 0.0, window, "constant", True, 0.0,
                           lambda t: -w * w * np.cos(w * t), lambda t: -w * w * np.sin(w * t), reach=math.inf)
    r1, r2 = sorted([r1.real, r2.real])
    if abs(r1 - r2) < 1e-14:
        if abs(r1) > 1e-14:
            raise ClassificationError("double nonzero root")
        plus = lambda t: (np.ones_like(np.asarray(t, dtype=float)), np.zeros_like(np.asarray(t, dtype=float)))
        minus = lambda t: (np.asarray(t, dtype=float), np.ones_like(np.asarray(t, dtype=float)))
        zero = lambda t: np.zeros_like(np.asarray(t, dtype=float))
        return KernelBasis(op, plus, minus, 0.0, 0.0, window, "constant", True, 1.0, zero, zero, reach=math.inf)
    if r1 > 0 or r2 < 0:
        raise ClassificationError("kernel does not split into a decaying and a non-decaying solution")
    plus = lambda t: (np.exp(r1 * t), r1 * np.exp(r1 * t))
    minus = lambda t: (np.exp(r2 * t), r2 * np.exp(r2 * t))
    return KernelBasis(op, plus, minus, -r1, r2, window, "constant", False, None,
                       lambda t: r1 * r1 * np.exp(r1 * t), lambda t: r2 * r2 * np.exp(r2 * t), reach=math.inf)


def _integrate_operator(op, y0, t_span):
    def rhs(t, y):
        return [y[1], -op.p(t) * y[1] - op.q(t) * y[0]]

    with np.errstate(invalid="ignore", over="ignore"):
        sol = solve_ivp(rhs, t_span, y0, method="DOP853", rtol=RTOL, atol=1e-200, dense_output=True)
    if sol.status != 0:
        raise SingularTrajectoryError(sol.message, float(sol.t[-1]))
    return sol.sol


def numeric_kernel(op, window, rates=None):
    """psi_plus by backward integration from the window end, psi_minus forward from its start.

    Seeds use the rates of the limiting constant-coefficient operator; backward
    integration damps the growing solution and forward integration damps the
    decaying one, so neither needs re-orthogonalization.
    """
    if op.period:
        return floquet_kernel(op, window)
    lo, hi = float(window[0]), float(window[1])
    if rates is None:
        r1, r2 = op.asymptotic_roots()
        if abs(r1.imag) > 1e-14:
            raise ClassificationError("complex limiting roots; use floquet_kernel or constant_kernel")
        rho, tau = -r1.real, r2.real
    else:
        rho, tau = rates
    resonant = abs(rho) < 1e-12 and abs(tau) < 1e-12
    sp = _integrate_operator(op, [math.exp(-rho * hi), -rho * math.exp(-rho * hi)], (hi + 5 * FD_STEP, lo - 5 * FD_STEP))
    if resonant:
        sm = _integrate_operator(op, [lo, 1.0], (lo - 5 * FD_STEP, hi + 5 * FD_STEP))
    else:
        sm = _integrate_operator(op, [math.exp(tau * lo), tau * math.exp(tau * lo)],
                                 (lo - 5 * FD_STEP, hi + 5 * FD_STEP))
    plus = lambda t: tuple(sp(np.asarray(t, dtype=float)))
    minus = lambda t: tuple(sm(np.asarray(t, dtype=float)))
    a = None
    if resonant:
        t = np.linspace(hi - 0.25 * (hi - lo), hi, 200)
        a = float(np.polyfit(t, minus(t)[0] / plus(t)[0], 1)[0])
    return KernelBasis(op, plus, minus, float(rho), float(tau), (lo, hi), "numeric", resonant, a)


def kernel_for_mode(profile, mode, lam, window=None):
    """Closed form when one exists, numeric (or Floquet) otherwise."""
    try:
        return closed_form_kernel(profile, mode, lam, window)
    except RegimeError:
        op = mode_operator(profile, lam, mode)
        win = _interval(profile, window)
        if op.period:
            return floquet_kernel(op, win)
        return numeric_kernel(op, win, predicted_rates(profile.params, lam, profile.h))


def _monodromy(op, t0, T, backward=False):
    span = (t0 + T, t0) if backward else (t0, t0 + T)
    cols = [_integrate_operator(op, e, span) for e in ([1.0, 0.0], [0.0, 1.0])]
    return np.column_stack([c(span[1]) for c in cols]), cols


def floquet_kernel(op, window, period=None):
    """Kernel of a periodic operator from its monodromy matrix over one period.

    The large multiplier and its eigenvector come from the forward monodromy,
    the small one from the backward monodromy, so neither is computed as a
    small difference of large numbers. psi_plus is integrated backward over a
    period and psi_minus forward, then extended by the multipliers.
    """
    T = period or op.period
    if not T:
        raise DomainError("floquet_kernel needs a period")
    lo, hi = float(window[0]), float(window[1])
    t0 = lo - 5 * FD_STEP
    check = np.linspace(t0, t0 + T, 7)
    drift = max(float(np.max(np.abs(op.p(check) - op.p(check + T)))), float(np.max(np.abs(op.q(check) - op.q(check + T)))))
    if drift > 1e-8:
        raise ClassificationError(f"coefficients are not periodic (drift {drift:.1e})")
    M, cols = _monodromy(op, t0, T)
    mu = np.linalg.eigvals(M)
    det = float(np.linalg.det(M))
    tr = float(np.trace(M))

    def extend(fn, mult):
        def out(t):
            t = np.asarray(t, dtype=float)
            j = np.floor((t - t0) / T)
            y = fn(t - j * T)
            scale = np.sign(mult) ** j * np.exp(j * math.log(abs(mult)))
            return y[0] * scale, y[1] * scale
        return out

    def combo(c):
        return lambda s: cols[0](s) * c[0] + cols[1](s) * c[1]

    if abs(det - 1.0) < 1e-6 and abs(abs(tr) - 2.0) < 1e-5:
        # double multiplier +-1: a Jordan block gives psi_minus = a t psi_plus + periodic
        m = math.copysign(1.0, tr)
        N = M - m * np.eye(2)
        if np.max(np.abs(N)) < 1e-9:
            raise ClassificationError("monodromy is +-identity; no growth direction to classify")
        _, _, vt = np.linalg.svd(N)
        v1 = vt[-1]
        v2 = np.array([-v1[1], v1[0]])
        a_step = float(v1 @ (N @ v2))
        base_plus, base_minus = combo(v1), combo(v2)

        def minus(t):
            t = np.asarray(t, dtype=float)
            j = np.floor((t - t0) / T)
            y2 = base_minus(t - j * T)
            y1 = base_plus(t - j * T)
            sj = m**j
            coef = j * m ** (j - 1) * a_step
            return y2[0] * sj + y1[0] * coef, y2[1] * sj + y1[1] * coef

        return KernelBasis(op, extend(base_plus, m), minus, 0.0, 0.0, (lo, hi), "floquet", True,
                           float(a_step / (m * T)), multipliers=(m, m), reach=math.inf)
    if np.max(np.abs(mu.imag)) > 1e-12:
        if abs(abs(mu[0]) - 1.0) > 1e-6:
            raise ClassificationError("complex multipliers off the unit circle")
        # elliptic monodromy: both solutions stay bounded
        plus = lambda t: _jump(cols, M, t0, T, t, [1.0, 0.0])
        minus = lambda t: _jump(cols, M, t0, T, t, [0.0, 1.0])
        return KernelBasis(op, plus, minus, 0.0, 0.0, (lo, hi), "floquet", True, 0.0,
                           multipliers=tuple(complex(x) for x in mu), reach=math.inf)
    w, V = np.linalg.eig(M)
    pick = int(np.argmax(np.abs(w)))
    mb, vb = float(w[pick].real), V[:, pick].real
    Mb, _ = _monodromy(op, t0, T, backward=True)
    wb, Vb = np.linalg.eig(Mb)
    pick = int(np.argmax(np.abs(wb)))
    ms, vs = 1.0 / float(wb[pick].real), Vb[:, pick].real
    if abs(abs(ms) - abs(mb)) < 1e-6:
        raise ClassificationError("multipliers of equal modulus without a unit multiplier")
    sp = _integrate_operator(op, list(ms * vs), (t0 + T, t0))
    sm = _integrate_operator(op, list(vb), (t0, t0 + T))
    return KernelBasis(op, extend(sp, ms), extend(sm, mb), -math.log(abs(ms)) / T, math.log(abs(mb)) / T,
                       (lo, hi), "floquet", False, None, multipliers=(ms, mb), reach=math.inf)


def _jump(cols, M, t0, T, t, v):
    t = np.asarray(t, dtype=float)
    j = np.floor((t - t0) / T).astype(int)
    flat = np.atleast_1d(j).ravel()
    comps = np.empty((2, flat.size))
    for idx, jj in enumerate(flat):
        comps[:, idx] = np.linalg.matrix_power(M, int(jj)) @ np.asarray(v, dtype=float)
    comps = comps.reshape((2,) + np.shape(j))
    s = t - j * T
    y = cols[0](s) * comps[0] + cols[1](s) * comps[1]
    return y[0], y[1]


def periodic_part(basis, which="plus", periods=2, num=200):
    """e^{rho t} psi_plus (or e^{-tau t} psi_minus) over `periods` periods, with the closure mismatch."""
    T = basis.op.period
    lo = basis.window[0]
    s = np.linspace(lo, lo + T, num)
    fn, rate = (basis.plus, basis.rho) if which == "plus" else (basis.minus, -basis.tau)
    first = np.exp(rate * s) * fn(s)[0]
    worst = 0.0
    for j in range(1, periods):
        other = np.exp(rate * (s + j * T)) * fn(s + j * T)[0]
        if basis.multipliers is not None and np.isreal(basis.multipliers[0]) and min(basis.multipliers, key=abs).real < 0:
            other = other * (-1) ** j
        worst = max(worst, float(np.max(np.abs(other - first)) / np.max(np.abs(first))))
    return s, first, worst


@dataclass(frozen=True)
class ParticularSolution:
    t: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    case: str
    gamma: float
    m: int
    bound_power: int
    bound_constant: float
    bound_ratio: float
    residual: float
    evaluate: object = field(default=None, repr=False)

    def to_dict(self):
        return {"case": self.case, "gamma": self.gamma, "m": self.m, "bound_power": self.bound_power,
                "bound_constant": self.bound_constant, "bound_ratio": self.bound_ratio, "residual": self.residual}


def _tail_rate(kind, basis, gamma):
    if kind == "plus":
        return basis.tau + gamma
    return gamma - basis.rho


def particular_solution(op, basis, f, gamma, m=0, num=400, f_reach=math.inf):
    """Variation of parameters with the limits of integration picked by how gamma compares with rho.

    gamma <= rho: -psi_plus int_{t0}^t psi_minus f/W - psi_minus int_t^inf psi_plus f/W;
    gamma > rho (and rho = tau = 0): both integrals from t to infinity. The
    infinite tails are closed with the integrand's known exponential rate.
    """
    if gamma <= 0:
        raise DomainError("gamma must be positive")
    lo, hi = basis.window
    W = basis.wronskian
    g_plus = lambda s: float(basis.plus(s)[0] * f(s) / W(s))
    g_minus = lambda s: float(basis.minus(s)[0] * f(s) / W(s))
    rho = basis.rho
    resonant_rate = abs(gamma - rho) < RESONANCE_TOL
    lo_i = lo - 5 * FD_STEP
    bounded = basis.resonant and basis.rho == 0
    rates = [basis.tau + gamma] + ([gamma] if bounded else [gamma - rho] if gamma > rho + RESONANCE_TOL else [])
    # integrate past the window when the kernel and f allow it, so the closed tail is negligible
    reach = min(basis.reach or hi, f_reach)
    hi_i = max(hi + 5 * FD_STEP, min(reach, hi + 40.0 / min(rates)))

    def tail(g, rate):
        if rate <= 0:
            raise DomainError("integrand does not decay; wrong branch for these rates")
        return g(hi_i) / (rate - m / hi_i)

    r_plus = rates[0]
    B_int = _cumulative(g_plus, lo_i, hi_i, tail(g_plus, r_plus), True, r_plus)
    if bounded:
        case = "bounded_kernel"
        A_int = _cumulative(g_minus, lo_i, hi_i, tail(g_minus, gamma), True, gamma)
        A = lambda t: A_int(t)
    elif gamma <= rho + RESONANCE_TOL:
        case = "resonant" if resonant_rate else "below"
        A_int = _cumulative(g_minus, lo_i, hi_i, 0.0, False, max(rho - gamma, 0.0))
        A = lambda t: -A_int(t)
    else:
        case = "above"
        r_minus = gamma - rho
        A_int = _cumulative(g_minus, lo_i, hi_i, tail(g_minus, r_minus), True, r_minus)
        A = lambda t: A_int(t)

    def evaluate(t):
        a, da = basis.plus(t)
        b, db = basis.minus(t)
        Av, Bv = A(t), -B_int(t)
        return Av * a + Bv * b, Av * da + Bv * db

    t = np.linspace(lo, hi, num)
    psi, dpsi = evaluate(t)
    inner = t[(t > lo + 5 * FD_STEP) & (t < hi - 5 * FD_STEP)]
    dd = finite_difference_derivative(lambda s: evaluate(s)[1], inner)
    pv, dv = evaluate(inner)
    res = dd + op.p(inner) * dv + op.q(inner) * pv - f(inner)
    scale = np.abs(dd) + np.abs(op.p(inner) * dv) + np.abs(op.q(inner) * pv) + np.abs(f(inner))
    residual = float(np.max(np.abs(res) / np.where(scale > 0, scale, 1.0)))
    power = m + 1 if resonant_rate else m
    tt = np.maximum(t, 1.0)
    env = np.abs(psi) / (tt**power * np.exp(-gamma * t))
    C = float(np.max(env))
    late = float(np.max(env[t >= lo + 0.5 * (hi - lo)]))
    ratio = C / late if late > 0 else math.inf
    return ParticularSolution(t, psi, dpsi, case, float(gamma), int(m), power, C, ratio, residual, evaluate)


def t_power_content(t, psi, gamma, max_power=3):
    """Polynomial coefficients of e^{gamma t} psi in t (leading power last)."""
    y = np.exp(gamma * np.asarray(t)) * np.asarray(psi)
    return np.polynomial.polynomial.polyfit(t, y, max_power)


def detect_t_power(t, psi, gamma, max_power=3, tol=1e-6):
    """Highest power j with a significant t^j e^{-gamma t} term."""
    c = t_power_content(t, psi, gamma, max_power)
    scale = np.max(np.abs(c))
    sig = np.flatnonzero(np.abs(c) > tol * scale)
    return int(sig[-1]) if sig.size else -1, c


@dataclass(frozen=True)
class DecayClassification:
    case: str
    c: float
    remainder: float
    bound_power: int

    def to_dict(self):
        return {"case": self.case, "c": self.c, "remainder": self.remainder, "bound_power": self.bound_power}


def classify_decay(t, psi, basis, gamma, m=0):
    """Which decay branch (below, resonant, above) a decaying solution falls in; c for gamma > rho."""
    t = np.asarray(t, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if abs(psi[-1]) > 1e-3 * np.max(np.abs(psi)) and abs(psi[-1]) > 1e-12:
        raise DomainError("solution does not decay on the window")
    rho = basis.rho
    tt = np.maximum(t, 1.0)
    if abs(gamma - rho) < RESONANCE_TOL:
        env = np.abs(psi) / (tt ** (m + 1) * np.exp(-gamma * t))
        return DecayClassification("resonant", 0.0, float(np.max(env)), m + 1)
    if gamma < rho:
        env = np.abs(psi) / (tt**m * np.exp(-gamma * t))
        return DecayClassification("below", 0.0, float(np.max(env)), m)
    if rho == 0:
        env = np.abs(psi) / (tt**m * np.exp(-gamma * t))
        return DecayClassification("above", 0.0, float(np.max(env)), m)
    # psi = c psi_plus + O(t^m e^{-gamma t}): least squares against psi_plus and the envelope terms
    cols = [basis.plus(t)[0]] + [t**j * np.exp(-gamma * t) for j in range(m + 1)]
    A = np.column_stack(cols)
    w = np.exp(rho * t)
    coef, *_ = np.linalg.lstsq(A * w[:, None], psi * w, rcond=None)
    c = float(coef[0])
    rem = psi - c * cols[0]
    env = np.abs(rem) / (tt**m * np.exp(-gamma * t))
    return DecayClassification("above", c, float(np.max(env)), m)


@dataclass(frozen=True)
class StructureFit:
    mode: str
    misfit: float
    constant: float
    coefficients: np.ndarray

    def to_dict(self):
        return {"mode": self.mode, "misfit": self.misfit, "constant": self.constant}


def periodic_integral_structure(p, period, m, alpha=None, mode="decay", harmonics=8, periods=6):
    """Integrate s^m e^{+-alpha s} p(s) and fit the polynomial-times-periodic form it must have."""
    if mode in ("grow", "decay") and not (alpha and alpha > 0):
        raise DomainError("alpha > 0 is required for exponential modes")
    T = float(period)
    end = periods * T
    if mode == "monomial":
        g = lambda s: s**m * p(s)
    elif mode == "grow":
        g = lambda s: s**m * math.exp(alpha * s) * p(s)
    elif mode == "decay":
        g = lambda s: s**m * math.exp(-alpha * s) * p(s)
    else:
        raise DomainError(f"unknown mode {mode!r}")
    t = np.linspace(0.0, end, 40 * periods * harmonics)
    if mode == "decay":
        # int_t^inf; the tail beyond 3*end is below roundoff for the tested alphas
        far = end + 40.0 / alpha
        I = _cumulative(g, 0.0, far, 0.0, True, alpha)
        vals = I(t)
        base = np.exp(-alpha * t)
    else:
        rate = alpha if mode == "grow" else 0.0
        I = _cumulative(g, 0.0, end, 0.0, False, rate)
        vals = I(t)
        base = np.exp(alpha * t) if mode == "grow" else np.ones_like(t)
    w = 2 * np.pi / T
    four = [np.ones_like(t)]
    for h in range(1, harmonics + 1):
        four += [np.cos(h * w * t), np.sin(h * w * t)]
    cols = [t**i * base * f for i in range(m + 1) for f in four]
    if mode == "monomial":
        cols.append(t ** (m + 1))
    if mode == "grow":
        cols.append(np.ones_like(t))
    A = np.column_stack(cols)
    scale = np.max(np.abs(A), axis=0)
    wts = 1.0 / np.maximum(np.abs(base) * (1 + t**m), 1e-300) if mode != "monomial" else np.ones_like(t)
    coef, *_ = np.linalg.lstsq(A / scale * wts[:, None], vals * wts, rcond=None)
    coef = coef / scale
    fit = A @ coef
    misfit = float(np.max(np.abs(fit - vals) * wts) / max(np.max(np.abs(vals * wts)), 1e-300))
    const = float(coef[-1]) if mode in ("monomial", "grow") else 0.0
    return StructureFit(mode, misfit, const, coef)


@dataclass(frozen=True)
class ModeSolution:
    t: np.ndarray
    coeffs: np.ndarray
    kernel_coeffs: np.ndarray
    bounds: tuple
    tail_bound: float
    modes: tuple

    def to_dict(self):
        return {"modes": list(self.modes), "bounds": [b.to_dict() for b in self.bounds],
                "kernel_coeffs": self.kernel_coeffs.tolist(), "tail_bound": self.tail_bound}


def supersolution_margin(profile, lam, gamma, t):
    """-(gamma^2 - b gamma + c - a lam): positive means e^{-gamma t} is a supersolution for that mode."""
    co = linearization_coefficients(profile, t)
    return -(gamma**2 - co.b * gamma + co.q(lam))


def solve_mode_system(profile, f_field, gamma, m, l_star, solution=None, window=None):
    """Mode-wise particular solutions of L phi = f for spherical modes 0..l_star.

    Modes above l_star are controlled by a supersolution comparison, which
    needs c - a lam_{l_star+1} negative with margin on the window. With a
    decaying solution supplied, its kernel content c_i psi_i^+ is reported.
    """
    basis = f_field.basis
    lo, hi = _interval(profile, window)
    modes = [i for i in range(basis.size) if basis.degrees[i] <= l_star]
    next_deg = l_star + 1
    lam_next = next_deg * (next_deg + basis.n - 2)
    t = np.linspace(lo, hi, 400)
    margin = supersolution_margin(profile, lam_next, gamma, t)
    if np.min(margin) <= 0:
        raise RegimeError(f"supersolution fails for degree {next_deg}; increase l_star")
    coeffs = np.zeros((t.size, basis.size))
    bounds = []
    kc = np.zeros(basis.size)
    kernels = {}
    for i in modes:
        lam = float(basis.eigenvalues[i])
        key = round(lam, 9)
        if key not in kernels:
            kernels[key] = kernel_for_mode(profile, i, lam, (lo, hi))
        kb = kernels[key]
        fi = (lambda col: (lambda s: np.interp(s, f_field.t, col)))(f_field.coeffs[:, i])
        if np.max(np.abs(f_field.coeffs[:, i])) == 0:
            ps = np.zeros(t.size)
            bounds.append(ParticularSolution(t, ps, ps, "zero", gamma, m, m, 0.0, 1.0, 0.0))
        else:
            sol = particular_solution(kb.op, kb, fi, gamma, m)
            bounds.append(sol)
            coeffs[:, i] = sol.evaluate(t)[0]
        if solution is not None:
            si = np.interp(t, solution.t, solution.coeffs[:, i])
            if np.max(np.abs(si)) > 0:
                kc[i] = classify_decay(t, si - coeffs[:, i], kb, gamma, m).c
    rest = [i for i in range(basis.size) if basis.degrees[i] > l_star]
    tail = 0.0
    if rest:
        ftail = np.sqrt(np.sum(f_field.coeffs[:, rest] ** 2, axis=1))
        tt = np.maximum(f_field.t, 1.0)
        sup = float(np.max(ftail / (tt**m * np.exp(-gamma * f_field.t))))
        tail = sup / float(np.min(margin))
    return ModeSolution(t, coeffs, kc, tuple(bounds), tail, tuple(modes))
