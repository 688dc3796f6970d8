"""Radial solutions on the cylinder for the Yamabe (k=1) and sigma_k equations.

For 2 <= k <= n the profile xi(t) solves
    xi_tt + (n/2k - 1)(1 - xi_t^2) - (n/2k)(1 - xi_t^2)^{1-k} e^{-2k xi} = 0
and conserves h = e^{(2k-n)xi}(1 - xi_t^2)^k - e^{-n xi}.  We integrate in the
rapidity zeta = artanh(xi_t), which keeps 1 - xi_t^2 = sech^2(zeta) accurate
when xi_t approaches 1 in the large regime.

For k=1 the profile is v(t) with v'' = (n-2)^2 v/4 - n(n-2) v^{(n+2)/(n-2)}/4.
"""

import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import ClassificationError, DomainError, InsufficientRangeError, RegimeError, SingularTrajectoryError
from .fitting import fit_exponential_sum, log_linear_fit, matrix_pencil_rates
from .validation import check_int

RTOL = 3e-14
ATOL = 1e-15
ZETA_LIMIT = 300.0


@dataclass(frozen=True)
class ProblemParams:
    n: int
    k: int

    @property
    def c_k(self):
        return 2.0 ** (-self.k) * math.comb(self.n, self.k)

    @property
    def regime(self):
        if self.k == 1:
            return "yamabe"
        if 2 * self.k < self.n:
            return "small"
        if 2 * self.k == self.n:
            return "middle"
        return "large"

    @property
    def rho0(self):
        """2 - n/k; the order-one decay rate of the large regime."""
        return 2.0 - self.n / self.k

    @property
    def rho0_exact(self):
        return Fraction(2 * self.k - self.n, self.k)

    @property
    def exponent(self):
        """(n+2)/(n-2), the Yamabe nonlinearity power."""
        return (self.n + 2) / (self.n - 2)

    def to_dict(self):
        return {"n": self.n, "k": self.k, "c_k": self.c_k, "regime": self.regime}


def make_params(n, k):
    n = check_int(n, "n", low=3)
    k = check_int(k, "k", low=1, high=n)
    return ProblemParams(n, k)


def _logcosh(z):
    a = np.abs(z)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def _log1pexp(x):
    return np.logaddexp(0.0, x)


def first_integral(params, xi, xi_t=None, zeta=None):
    """e^{(2k-n)xi}(1-xi_t^2)^k - e^{-n xi}; pass zeta for the rapidity form."""
    n, k = params.n, params.k
    xi = np.asarray(xi, dtype=float)
    if zeta is not None:
        return np.exp((2 * k - n) * xi - 2 * k * _logcosh(np.asarray(zeta))) - np.exp(-n * xi)
    q = 1.0 - np.asarray(xi_t, dtype=float) ** 2
    return np.exp((2 * k - n) * xi) * q**k - np.exp(-n * xi)


def yamabe_energy(params, v, v_t):
    """Conserved Hamiltonian of the radial Yamabe equation."""
    n = params.n
    v = np.asarray(v, dtype=float)
    c = (n - 2) ** 2 / 8.0
    return 0.5 * np.asarray(v_t) ** 2 - c * v**2 + c * v ** (2 * n / (n - 2))


def constant_radial(params):
    """The constant solution: v in the Yamabe branch, xi in the sigma_k branch."""
    n, k = params.n, params.k
    if params.regime == "yamabe":
        return ((n - 2) / n) ** ((n - 2) / 4.0)
    if params.regime == "small":
        return -math.log(1.0 - 2.0 * k / n) / (2.0 * k)
    raise RegimeError(f"no constant solution in the {params.regime} regime")


@dataclass(frozen=True)
class RadialProfile:
    """A radial solution sampled on t.

    For sigma_k, xi/xi_t are the profile and zeta its rapidity; for Yamabe,
    xi/xi_t hold v and v'. h is the conserved quantity from the initial data.
    """

    params: ProblemParams
    t: np.ndarray
    xi: np.ndarray
    xi_t: np.ndarray
    h: float
    a0: float = None
    period: float = None
    zeta: np.ndarray = None
    flags: tuple = ()
    solution: object = field(default=None, repr=False, compare=False)

    @property
    def is_yamabe(self):
        return self.params.k == 1

    def evaluate(self, t):
        """(xi, xi_t) at arbitrary t inside the integrated span."""
        if self.solution is None:
            raise InsufficientRangeError("profile has no dense output")
        y = self.solution(np.asarray(t, dtype=float))
        if self.is_yamabe:
            return y[0], y[1]
        return y[0], np.tanh(y[1])

    def evaluate_full(self, t):
        """(xi, xi_t, xi_tt, xi_ttt) at arbitrary t."""
        if self.solution is None:
            raise InsufficientRangeError("profile has no dense output")
        y = self.solution(np.asarray(t, dtype=float))
        if self.is_yamabe:
            d2, d3 = _yamabe_higher(self.params, y[0], y[1])
            return y[0], y[1], d2, d3
        return (y[0], np.tanh(y[1])) + _sigma_higher(self.params, y[0], y[1])

    def one_minus_xi_t(self, t):
        """1 - xi_t without cancellation: 2 / (1 + e^{2 zeta})."""
        if self.is_yamabe:
            raise RegimeError("rapidity form is for sigma_k profiles")
        zeta = self.solution(np.asarray(t, dtype=float))[1]
        return np.exp(-_log1pexp(2.0 * zeta)) * 2.0

    def derivatives(self):
        """(xi_tt, xi_ttt) on the stored grid."""
        if self.is_yamabe:
            return _yamabe_higher(self.params, self.xi, self.xi_t)
        zeta = self.zeta if self.zeta is not None else np.arctanh(self.xi_t)
        return _sigma_higher(self.params, self.xi, zeta)

    def to_dict(self):
        out = {
            "params": self.params.to_dict(),
            "h": self.h,
            "a0": self.a0,
            "period": self.period,
            "t_span": [float(self.t[0]), float(self.t[-1])],
            "flags": list(self.flags),
        }
        if self.params.regime == "middle":
            out["slope"] = middle_slope(self.params, self.h)
        return out


def _zeta_rhs(params, xi, zeta):
    n, k = params.n, params.k
    return -(n / (2.0 * k) - 1.0) + (n / (2.0 * k)) * np.exp(2 * k * _logcosh(zeta) - 2 * k * xi)


def _sigma_higher(params, xi, zeta):
    n, k = params.n, params.k
    zt = _zeta_rhs(params, xi, zeta)
    sech2 = np.exp(-2.0 * _logcosh(zeta))
    xt = np.tanh(zeta)
    b = np.exp(2 * k * _logcosh(zeta) - 2 * k * xi)
    ztt = n * b * xt * (zt - 1.0)
    return sech2 * zt, sech2 * (ztt - 2.0 * xt * zt**2)


def _yamabe_higher(params, v, vt):
    n = params.n
    p = params.exponent
    v = np.asarray(v, dtype=float)
    vtt = 0.25 * (n - 2) ** 2 * v - 0.25 * n * (n - 2) * v**p
    vttt = (0.25 * (n - 2) ** 2 - 0.25 * n * (n - 2) * p * v ** (p - 1)) * vt
    return vtt, vttt


def _integrate(params, y0, t_span, t_eval):
    if params.k == 1:
        n = params.n
        p = params.exponent

        def rhs(t, y):
            return [y[1], 0.25 * (n - 2) ** 2 * y[0] - 0.25 * n * (n - 2) * np.abs(y[0]) ** p]

        def collapse(t, y):
            return y[0]

        collapse.terminal = True
        events = [collapse]
    else:

        def rhs(t, y):
            return [np.tanh(y[1]), _zeta_rhs(params, y[0], y[1])]

        def degenerate(t, y):
            return ZETA_LIMIT - abs(y[1])

        degenerate.terminal = True
        events = [degenerate]
    with np.errstate(over="ignore"):
        sol = solve_ivp(rhs, t_span, y0, method="DOP853", rtol=RTOL, atol=ATOL,
                        dense_output=True, events=events, t_eval=t_eval)
    if sol.status == 1:
        t_hit = float(sol.t_events[0][0])
        what = "v reached 0" if params.k == 1 else "|xi_t| reached 1"
        raise SingularTrajectoryError(f"{what} near t = {t_hit:.6g}", t_hit)
    if sol.status != 0:
        raise SingularTrajectoryError(sol.message, float(sol.t[-1]))
    return sol


def middle_slope(params, h):
    if not 0 < h < 1:
        raise DomainError("middle regime needs 0 < h < 1")
    return math.sqrt(1.0 - h ** (1.0 / params.k))


def integrate_radial(params, xi0, xi_t0, t_span=(0.0, 30.0), num=3001):
    """Integrate the radial equation from (xi0, xi_t0) at t_span[0]."""
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 == t0:
        raise DomainError("empty t_span")
    t_eval = np.linspace(t0, t1, num)
    if params.k == 1:
        if xi0 <= 0:
            raise DomainError("Yamabe profiles must be positive")
        y0 = [float(xi0), float(xi_t0)]
        h = float(yamabe_energy(params, xi0, xi_t0))
    else:
        if not abs(xi_t0) < 1:
            raise DomainError("|xi_t| < 1 is required for sigma_k profiles")
        y0 = [float(xi0), float(np.arctanh(xi_t0))]
        h = float(first_integral(params, xi0, zeta=y0[1]))
    sol = _integrate(params, y0, (t0, t1), t_eval)
    return _profile_from_solution(params, sol, h)


def _profile_from_solution(params, sol, h, a0=None):
    flags = []
    if params.k > 1 and h <= 0:
        flags.append("nonpositive_h")
        warnings.warn("h <= 0: the singularity is removable or the data is outside the studied class")
    t = sol.t
    if t[0] > t[-1]:
        order = np.argsort(t)
        y = sol.y[:, order]
        t = t[order]
    else:
        y = sol.y
    if params.k == 1:
        prof = RadialProfile(params, t, y[0], y[1], h, flags=tuple(flags), solution=sol.sol)
    else:
        prof = RadialProfile(params, t, y[0], np.tanh(y[1]), h, zeta=y[1], flags=tuple(flags), solution=sol.sol)
    if a0 is None and params.regime in ("middle", "large") and h > 0:
        a0 = _estimate_a0(prof)
    return replace(prof, a0=a0)


def _estimate_a0(profile):
    """lim (xi - slope*t), from the far end of the profile."""
    p = profile.params
    T, x, xt = profile.t[-1], profile.xi[-1], profile.xi_t[-1]
    if p.regime == "large":
        if xt < 0.5:
            return None
        a0 = x - T + (xt - 1.0) / p.rho0
        for _ in range(3):
            a1 = large_a1(p, profile.h, a0)
            a0 = x - T + (xt - 1.0) / p.rho0 + large_a2(p, a1) * math.exp(-2 * p.rho0 * T)
        return float(a0)
    if profile.h >= 1:
        return None
    s = middle_slope(p, profile.h)
    if xt <= 0:
        return None
    return float(x - s * T + (xt - s) / (p.n * s))


def large_a1(params, h, a0):
    """Coefficient of e^{-rho0 t} in xi - t - a0, from the first integral."""
    k, n = params.k, params.n
    return k / (2 * k - n) * 0.5 * h ** (1.0 / k) * math.exp(-params.rho0 * a0)


def large_a1_literal(params, h, a0):
    """The same coefficient with exponent -(2k-n)a0 (disagrees unless k=1)."""
    k, n = params.k, params.n
    return k / (2 * k - n) * 0.5 * h ** (1.0 / k) * math.exp(-(2 * k - n) * a0)


def large_a2(params, a1):
    """Coefficient of e^{-2 rho0 t}: balancing L0 psi = F at that order gives -a1^2 rho0 / 4."""
    return -(a1**2) * params.rho0 / 4.0


def large_a2_literal(params, a1):
    return a1**2 * params.rho0 / 4.0


def profile_from_asymptotics(params, h, a0, t_span=(0.0, 30.0), t_seed=None, num=3001):
    """Large-regime profile with prescribed (h, a0), integrated back from a far seed."""
    if params.regime != "large":
        raise RegimeError("asymptotic seeding is implemented for the large regime")
    if h <= 0:
        raise DomainError("h must be positive")
    t0, t1 = float(t_span[0]), float(t_span[1])
    ts = max(t1, 40.0) if t_seed is None else float(t_seed)
    n, k, r = params.n, params.k, params.rho0
    a1 = large_a1(params, h, a0)
    x = math.exp(-r * ts)
    xi = ts + a0 + a1 * x + large_a2(params, a1) * x * x
    q = ((h + math.exp(-n * xi)) * math.exp((n - 2 * k) * xi)) ** (1.0 / k)
    xt = math.sqrt(1.0 - q)
    zeta = math.log1p(xt) - 0.5 * math.log(q)
    t_eval = np.linspace(t0, t1, num)
    sol = _integrate(params, [xi, zeta], (ts, t0), None)
    # re-run on the requested samples; the dense output covers [t0, ts]
    y = sol.sol(t_eval)
    prof = RadialProfile(params, t_eval, y[0], np.tanh(y[1]), float(h), a0=float(a0), zeta=y[1],
                         solution=sol.sol)
    return prof


def first_integral_residual(profile):
    """max_t |first integral - h| (Hamiltonian drift in the Yamabe branch)."""
    p = profile.params
    if p.k == 1:
        vals = yamabe_energy(p, profile.xi, profile.xi_t)
    elif profile.zeta is not None:
        vals = first_integral(p, profile.xi, zeta=profile.zeta)
    else:
        vals = first_integral(p, profile.xi, xi_t=profile.xi_t)
    return float(np.max(np.abs(vals - profile.h)))


def detect_period(profile, closure_tol=1e-6):
    """Period from successive maxima of xi; None for a constant profile."""
    p = profile.params
    if p.regime not in ("yamabe", "small"):
        raise RegimeError("periods exist only in the Yamabe and small regimes")
    xi = profile.xi
    if np.ptp(xi) < 1e-10 and np.max(np.abs(profile.xi_t)) < 1e-10:
        return None
    slope = profile.xi_t
    idx = np.flatnonzero((slope[:-1] > 0) & (slope[1:] <= 0))
    if len(idx) < 2:
        raise ClassificationError("profile is not oscillating within the window")

    def deriv(s):
        return profile.evaluate(s)[1]

    peaks = [brentq(deriv, profile.t[i], profile.t[i + 1], xtol=1e-14, rtol=1e-14) for i in idx]
    period = float(np.mean(np.diff(peaks)))
    start = peaks[0]
    if start + 2 * period > profile.t[-1]:
        raise InsufficientRangeError("need two full periods to check closure")
    s = np.linspace(start, start + period, 200)
    a, at = profile.evaluate(s)
    b, bt = profile.evaluate(s + period)
    closure = float(max(np.max(np.abs(a - b)), np.max(np.abs(at - bt))))
    if closure > closure_tol:
        raise ClassificationError(f"orbit does not close: mismatch {closure:.2e}")
    return period


def with_period(profile):
    return replace(profile, period=detect_period(profile))


@dataclass(frozen=True)
class NuIndexSet:
    values: tuple
    regime: str
    integer_ratio: bool = None
    generator: float = None

    def as_list(self):
        return [float(v) for v in self.values]


def nu_index_set(params, h=None, cutoff=4.0):
    """Exponents of the radial expansion, sorted, duplicates merged."""
    if params.regime == "large":
        r = params.rho0_exact
        n = params.n
        vals = set()
        j = 0
        while n * j <= cutoff:
            i = 0
            while i * r + n * j <= cutoff:
                vals.add(i * r + n * j)
                i += 1
            j += 1
        ratio = Fraction(n) / r
        return NuIndexSet(tuple(float(v) for v in sorted(vals)), "large", ratio.denominator == 1, float(r))
    if params.regime == "middle":
        if h is None:
            raise DomainError("middle regime needs h")
        s = middle_slope(params, h)
        count = int(math.floor(cutoff / s + 1e-12))
        return NuIndexSet(tuple(i * s for i in range(count + 1)), "middle", None, s)
    raise RegimeError("the radial expansion applies to the middle and large regimes")


@dataclass(frozen=True)
class RadialExpansion:
    a: tuple
    nu: tuple
    m: int
    residual_fit: float
    ladder: tuple = ()
    window: tuple = ()

    def to_dict(self):
        return {"a": list(self.a), "nu": list(self.nu), "m": self.m,
                "residual_rate": self.residual_fit, "ladder": list(self.ladder), "window": list(self.window)}


def _offset(profile):
    p = profile.params
    if p.regime == "large":
        return profile.xi - profile.t
    return profile.xi - middle_slope(p, profile.h) * profile.t


def remainder_slopes(t, y, coefs, nu, count, level=1e-7, half_width=2.0):
    """Local decay rate of y - sum_{j<=i} a_j e^{-nu_j t} for i = 0..count-1.

    Each rate is a log-linear fit on a window centred where the remainder has
    dropped to `level`, well above the integration noise.
    """
    slopes = []
    rem = np.array(y, dtype=float)
    for i in range(count):
        rem = rem - coefs[i] * np.exp(-nu[i] * t)
        mag = np.abs(rem)
        below = np.flatnonzero(mag < level)
        if below.size == 0:
            raise InsufficientRangeError("remainder never reaches the fitting level")
        tc = max(t[below[0]], t[0] + half_width)
        sel = (t >= tc - half_width) & (t <= tc + half_width)
        rate, _, _ = log_linear_fit(t[sel], rem[sel], floor=1e-12, min_samples=20)
        slopes.append(float(rate))
    return slopes


def pencil_rates(profile, count=2, window=None):
    """Leading rates of xi - slope*t - a0 by the matrix pencil method."""
    t = profile.t
    p = profile.params
    base = p.rho0 if p.regime == "large" else p.n * middle_slope(p, profile.h)
    lo, hi = window or (t[0] + 1.0, min(t[-1], t[0] + 1.0 + 14.0 / base))
    sel = (t >= lo) & (t <= hi)
    step = max(1, int(sel.sum() // 300))
    y = _offset(profile)[sel] - profile.a0
    return matrix_pencil_rates(t[sel][::step], y[::step], count + 4)[:count]


def radial_expansion(profile, m=4, window=None, fit_terms=12, level=1e-7):
    """Coefficients a_0..a_m of xi - slope*t = sum a_i e^{-nu_i t}.

    The terms are fitted jointly by least squares on the window, with
    fit_terms exponentials in total so that the truncation is absorbed. The
    ladder is then measured independently: the local decay rate of the
    remainder after subtracting 1, 2, ..., m+1 terms. Its last entry is the
    remainder rate after m terms.
    """
    p = profile.params
    if p.regime not in ("middle", "large"):
        raise RegimeError("radial expansions exist in the middle and large regimes")
    if profile.a0 is None:
        raise InsufficientRangeError("profile does not reach its asymptotic regime")
    t = profile.t
    lo, hi = window or (t[0] + 4.0, t[-1])
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < 50:
        raise InsufficientRangeError("fit window too short")
    ts, ys = t[sel], _offset(profile)[sel]
    total = max(fit_terms, m + 2)
    if p.regime == "large":
        exact = nu_index_set(p, cutoff=(total + 1) * p.rho0).values
    else:
        step = p.n * middle_slope(p, profile.h)
        exact = [i * step for i in range(total + 1)]
    nu = [v for v in exact if v * lo < 600][: total + 1]
    coef, _ = fit_exponential_sum(ts, ys, nu)
    a = tuple(float(c) for c in coef[: m + 1])
    ladder = tuple(remainder_slopes(ts, ys, coef, nu, m + 1, level=level, half_width=1.5))
    return RadialExpansion(a, tuple(nu[: m + 1]), m, ladder[-1], ladder, (float(lo), float(hi)))
