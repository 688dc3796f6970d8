"""Asymptotic expansions of nonradial solutions about their radial profile.

Three pipelines: the improved radial match in the large regime (refit h and a_0
from the sphere average), extraction of the order-1 term e^{-t} (kernel shape) Y,
and the iterated extraction sum c(t) t^j e^{-mu t} X driven by the index set.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import InsufficientRangeError, MatchingError, NoiseFloorError, RegimeError, StageError
from .fitting import log_linear_fit
from .index_sets import index_set_for, kernel_rates
from .pde_lab import CylinderSolution
from .radial_core import profile_from_asymptotics
from .sphere_spectral import CylinderField, sphere_area

NOISE_FLOOR = 1e-10
GRID_STEP = 0.05


# ---------------------------------------------------------------- decay fits


@dataclass(frozen=True)
class DecayFit:
    rate: float
    power: int
    coefficient: object
    goodness: float
    spread: float
    model: str
    window: tuple
    margin: float = None
    period: float = None

    def evaluate(self, t):
        t = np.asarray(t, dtype=float)
        c = self.coefficient(t) if callable(self.coefficient) else self.coefficient
        return c * t**self.power * np.exp(-self.rate * t)

    def to_dict(self):
        coef = None if callable(self.coefficient) else float(self.coefficient)
        return {"rate": self.rate, "power": self.power, "coefficient": coef, "goodness": self.goodness,
                "spread": self.spread, "model": self.model, "window": list(self.window), "margin": self.margin,
                "period": self.period}


def _above_floor(t, c, floor):
    t = np.asarray(t, dtype=float)
    c = np.asarray(c, dtype=float)
    keep = np.abs(c) > floor
    if keep.sum() < 30:
        raise NoiseFloorError(f"only {int(keep.sum())} samples above the noise floor {floor:g}")
    return t[keep], c[keep]


def _linear_log_fit(t, logy, extra=None):
    cols = [np.ones_like(t), -t] + ([] if extra is None else list(extra))
    A = np.column_stack(cols)
    coef, *_ = np.linalg.lstsq(A, logy, rcond=None)
    resid = logy - A @ coef
    ss = np.sum((logy - logy.mean()) ** 2)
    return coef, float(np.sum(resid**2)), (1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0)


def fit_decay(t, c, model="exp", power=None, period=None, max_power=3, floor=NOISE_FLOOR, harmonics=6):
    """Fit c(t) ~ C t^j e^{-rate t} with C constant or periodic.

    model: "exp" (j = 0), "texp" (j chosen by least squares unless given) or
    "periodic" (C(t) with the given period). goodness is R^2 of the log fit;
    spread is the rate difference between the two halves of the window.
    """
    t, c = _above_floor(t, c, floor)
    if model == "periodic" and period is None:
        raise InsufficientRangeError("periodic fits need a period")
    if model == "texp" and np.any(t <= 0):
        raise InsufficientRangeError("t-power fits need t > 0")
    sign = float(np.sign(c[np.argmax(np.abs(c))]))
    if model == "periodic" and np.any(np.sign(c) != sign):
        raise InsufficientRangeError("periodic coefficient changes sign; the log fit needs one sign")
    logy = np.log(np.abs(c))

    def solve(tt, ly, j):
        extra = None
        if model == "periodic":
            w = 2 * np.pi / period
            extra = [f(q * w * tt) for q in range(1, harmonics + 1) for f in (np.cos, np.sin)]
        return _linear_log_fit(tt, ly - j * np.log(tt) if j else ly, extra)

    powers = [0] if model != "texp" else ([power] if power is not None else list(range(max_power + 1)))
    results = sorted(((solve(t, logy, j), j) for j in powers), key=lambda r: r[0][1])
    (coef, ssr, r2), j = results[0]
    margin = results[1][0][1] / max(ssr, 1e-300) if len(results) > 1 else None
    rate = float(coef[1])
    if rate * (t[-1] - t[0]) < 3.0:
        raise InsufficientRangeError(f"window spans {rate * (t[-1] - t[0]):.2f} e-folds, need 3")
    half = t.size // 2
    r1 = solve(t[:half], logy[:half], j)[0][1]
    r2_ = solve(t[half:], logy[half:], j)[0][1]
    spread = float(abs(r1 - r2_))
    if model == "periodic":
        w = 2 * np.pi / period
        a = coef[2:]

        def coefficient(s, a=a, c0=coef[0]):
            s = np.asarray(s, dtype=float)
            e = c0 + sum(a[2 * i] * np.cos((i + 1) * w * s) + a[2 * i + 1] * np.sin((i + 1) * w * s)
                         for i in range(harmonics))
            return sign * np.exp(e)

        return DecayFit(rate, 0, coefficient, float(r2), spread, model, (float(t[0]), float(t[-1])), None, period)
    return DecayFit(rate, int(j), sign * float(np.exp(coef[0])), float(r2), spread, model,
                    (float(t[0]), float(t[-1])), margin)


class DecayFitter:
    """Estimator wrapper around fit_decay (fit/predict/get_params/set_params)."""

    def __init__(self, model="exp", power=None, period=None, max_power=3, floor=NOISE_FLOOR):
        self.model = model
        self.power = power
        self.period = period
        self.max_power = max_power
        self.floor = floor

    def get_params(self, deep=True):
        return {"model": self.model, "power": self.power, "period": self.period,
                "max_power": self.max_power, "floor": self.floor}

    def set_params(self, **params):
        for key, value in params.items():
            if key not in self.get_params():
                raise ValueError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, t, y):
        self.result_ = fit_decay(t, y, self.model, self.power, self.period, self.max_power, self.floor)
        self.rate_ = self.result_.rate
        self.power_ = self.result_.power
        return self

    def predict(self, t):
        if not hasattr(self, "result_"):
            raise NoiseFloorError("DecayFitter is not fitted")
        return self.result_.evaluate(t)

    def score(self, t, y):
        y = np.asarray(y, dtype=float)
        p = self.predict(t)
        return 1.0 - float(np.sum((y - p) ** 2) / np.sum((y - y.mean()) ** 2))


# ---------------------------------------------------------------- deviations


def _x0(basis):
    return math.sqrt(sphere_area(basis.n))


def _grid(source, window, step=GRID_STEP):
    """Uniform samples of a solution, or the stored samples of a field, inside the window."""
    lo, hi = window
    if isinstance(source, CylinderSolution):
        count = int(round((hi - lo) / step)) + 1
        return np.linspace(lo, hi, count)
    t = source.t[(source.t >= lo - 1e-12) & (source.t <= hi + 1e-12)]
    if t.size < 30:
        raise InsufficientRangeError("fewer than 30 field samples inside the window")
    return t


def default_window(source):
    if isinstance(source, CylinderSolution):
        T = source.spec.T
        return (min(4.0, T / 4), max(T - 8.0, T * 0.6))
    t = source.t
    return (float(t[0]) + 0.5 * (t[-1] - t[0]) * 0.1, float(t[-1]))


def deviation(source, profile, t):
    """w - xi_profile as a CylinderField on t (from a CylinderSolution without cancellation)."""
    xi, xt, xtt, _ = profile.evaluate_full(t)
    if isinstance(source, CylinderSolution):
        phi = source.perturbation(t)
        if profile is source.reference:
            return phi
        ri, rt, rtt, _ = source.reference.evaluate_full(t)
        d, dt, dtt = ri - xi, rt - xt, rtt - xtt
        c, ct, ctt = phi.coeffs.copy(), phi.coeffs_t.copy(), phi.coeffs_tt.copy()
    else:
        sel = np.clip(np.searchsorted(source.t, t - 1e-12), 0, len(source.t) - 1)
        if not np.allclose(source.t[sel], t, atol=1e-12, rtol=0):
            raise InsufficientRangeError("field is not sampled on the requested grid")
        c = source.coeffs[sel].copy()
        ct = None if source.coeffs_t is None else source.coeffs_t[sel].copy()
        ctt = None if source.coeffs_tt is None else source.coeffs_tt[sel].copy()
        d, dt, dtt = -xi, -xt, -xtt
        phi = source
    x0 = _x0(phi.basis)
    c[:, 0] += d * x0
    if ct is not None:
        ct[:, 0] += dt * x0
    if ctt is not None:
        ctt[:, 0] += dtt * x0
    return CylinderField(np.asarray(t, dtype=float), phi.basis, c, ct, ctt)


def _sphere_mean(source, t):
    if isinstance(source, CylinderSolution):
        x0 = _x0(source.basis)
        phi = source.perturbation(t)
        xi, xt, _, _ = source.reference.evaluate_full(t)
        return xi, phi.coeffs[:, 0] / x0, xt, phi.coeffs_t[:, 0] / x0
    x0 = _x0(source.basis)
    return source.coeffs[:, 0] / x0, 0.0 * t, source.coeffs_t[:, 0] / x0, 0.0 * t


def _sup_decay(t, sup, floor=NOISE_FLOOR):
    keep = sup > floor
    if keep.sum() < 30:
        return math.inf, 0.0, 1.0
    rate, const, r2 = log_linear_fit(t[keep], sup[keep], floor=floor)
    return float(rate), float(const), float(r2)


# ---------------------------------------------------------------- improved radial match


@dataclass(frozen=True)
class MatchResult:
    profile: object
    h: float
    a0: float
    rate: float
    epsilon: float
    cap: float
    window: tuple
    gamma_t_check: float
    certificate: dict = field(default_factory=dict)

    def to_dict(self):
        return {"h": self.h, "a0": self.a0, "rate": self.rate, "epsilon": self.epsilon, "cap": self.cap,
                "window": list(self.window), "gamma_t_check": self.gamma_t_check, **self.certificate}


def improved_radial_match(source, params=None, window=None, t_end=None):
    """Refit (h, a0) of the large-regime profile from the sphere average of w.

    The sphere average gamma satisfies 1 - gamma_t ~ (h^{1/k}/2) e^{-rho_0 (t + a_0)};
    the first estimate comes from that relation at the window's end, then a
    weighted least-squares fit of gamma against the profile family refines it.
    """
    params = params or source.params
    if params.regime != "large":
        raise RegimeError("the improved radial match is for the large regime")
    window = window or default_window(source)
    t = _grid(source, window)
    r, k = params.rho0, params.k
    base, dev, base_t, dev_t = _sphere_mean(source, t)
    gamma = base + dev
    one_minus_gt = (1.0 - base_t) - dev_t
    if isinstance(source, CylinderSolution):
        one_minus_gt = source.reference.one_minus_xi_t(t) - dev_t
    a0 = float(gamma[-1] - t[-1] - one_minus_gt[-1] / r)
    hk = float(2.0 * one_minus_gt[-1] * math.exp(r * (t[-1] + a0)))
    if hk <= 0:
        raise MatchingError("sphere average is not asymptotically linear")
    span = (0.0, max(t_end or 0.0, t[-1] + 1.0))
    seed = max(40.0, span[1] + 10.0)
    weight = np.exp(t - t[-1])

    def family(p):
        prof = profile_from_asymptotics(params, p[0] ** k, p[1], span, t_seed=seed, num=11)
        return prof

    def resid(p):
        xi = family(p).evaluate(t)[0]
        return (base - xi + dev) * weight

    fit = least_squares(resid, [hk, a0], x_scale=[hk, 1.0], xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    hk, a0 = float(fit.x[0]), float(fit.x[1])
    prof = profile_from_asymptotics(params, hk**k, a0, span, t_seed=seed, num=int(4 * span[1]) + 1)
    D = deviation(source, prof, t)
    rate, const, r2 = _sup_decay(t, D.sup_theta())
    cap = min(1.0 - r, r)
    if rate < r + 1e-3:
        raise MatchingError(f"deviation decays at {rate:.4f}, not faster than rho_0 = {r:.4f}")
    eps = min(rate - r, cap)
    pred = 0.5 * hk * np.exp(-r * (t + a0))
    half = t >= 0.5 * (t[0] + t[-1])
    check = float(np.max(np.abs(one_minus_gt[half] / pred[half] - 1.0)))
    cert = {"r_squared": r2, "constant": const, "fit_cost": float(fit.cost), "radial_like": not math.isfinite(rate)}
    return MatchResult(prof, hk**k, a0, float(rate), float(eps), cap, tuple(window), check, cert)


# ---------------------------------------------------------------- order one


def kernel_shape(profile, t):
    """The order-1 kernel shape without the e^{-t} factor: 1 + xi_t (sigma_k), -v' + (n-2)v/2 (Yamabe)."""
    p = profile.params
    if p.k == 1:
        v, vt = profile.evaluate(t)
        return -vt + 0.5 * (p.n - 2) * v
    if p.regime in ("middle", "large"):
        return 2.0 - profile.one_minus_xi_t(t)
    return 1.0 + profile.evaluate(t)[1]


@dataclass(frozen=True)
class Order1Result:
    Y: dict
    beta: float
    beta_r2: float
    remainder: CylinderField
    flag: str
    window: tuple
    offset_rate: float = None

    def y_vector(self, basis):
        out = np.zeros(basis.size)
        for i, v in self.Y.items():
            out[i] = v
        return out

    def to_dict(self):
        return {"Y": {str(i): v for i, v in sorted(self.Y.items())}, "beta": self.beta, "beta_r2": self.beta_r2,
                "flag": self.flag, "window": list(self.window), "offset_rate": self.offset_rate}


def _nuisance_rates(profile, count=4, cutoff=4.0):
    """Index-set rates above 1 (with their t-power budget) that can sit under the order-1 term."""
    p = profile.params
    periodic = profile.period is not None and p.regime in ("yamabe", "small")
    iset = index_set_for(p, cutoff, profile.h if p.regime == "middle" else None, profile if periodic else None)
    budget = _power_budget(iset)
    out = [(float(e.value), j) for e, b in zip(iset.elements, budget) if float(e.value) > 1.0 + 1e-9
           for j in range(b + 1)]
    rates = sorted({r for r, _ in out})[:count]
    return [(r, j) for r, j in out if r in rates]


def order1_extract(source, profile, params=None, window=None, floor=NOISE_FLOOR, extra_rates=4):
    """Degree-1 coefficient Y of e^{-t} (kernel shape) Y(theta) and the remainder rate beta.

    Each degree-1 coefficient is fitted jointly with the next extra_rates
    index-set rates (and their t-powers), the same columns extract_expansion
    uses at order 1.
    """
    params = params or profile.params
    window = window or default_window(source)
    t = _grid(source, window)
    D = deviation(source, profile, t)
    basis = D.basis
    shape = kernel_shape(profile, t) * np.exp(-t)
    idx = list(basis.index_range(1))
    Y = {}
    offsets = []
    top = max(float(np.max(np.abs(D.coeffs[:, i]))) for i in idx)
    if top < floor:
        rem = D
        flag = "no_degree_one"
        Y = {i: 0.0 for i in idx}
    else:
        flag = "ok"
        c = D.coeffs.copy()
        nuisance = _nuisance_rates(profile, extra_rates)
        cols = [shape] + [t**j * np.exp(-r * t) for r, j in nuisance]
        A = np.column_stack(cols)
        scale = np.linalg.norm(A, axis=0)
        for i in idx:
            ci = D.coeffs[:, i]
            if np.max(np.abs(ci)) < floor:
                Y[i] = 0.0
                continue
            coef, *_ = np.linalg.lstsq(A / scale, ci, rcond=None)
            coef = coef / scale
            Y[i] = float(coef[0])
            # slowest nuisance rate carrying a visible coefficient
            seen = [r for (r, j), a in zip(nuisance, coef[1:]) if abs(a) * math.exp(-r * t[0]) > 100 * floor]
            if seen:
                offsets.append(min(seen))
            c[:, i] = ci - Y[i] * shape
        rem = CylinderField(t, basis, c)
    beta, _, r2 = _sup_decay(t, rem.sup_theta(), floor)
    return Order1Result(Y, float(beta), float(r2), rem, flag, tuple(window),
                        float(min(offsets)) if offsets else None)


# ---------------------------------------------------------------- iterated extraction


@dataclass(frozen=True)
class Term:
    mu: float
    power: int
    index: int
    degree: int
    coefficient: object
    coef_class: str
    significant: bool = True

    def values(self, t):
        c = self.coefficient(t) if callable(self.coefficient) else self.coefficient
        return c * t**self.power * np.exp(-self.mu * t)

    def to_dict(self):
        coef = self.coefficient
        if callable(coef):
            coef = {"class": self.coef_class, "mean": float(np.mean(coef(np.linspace(0, coef.period, 64))))}
        else:
            coef = float(coef)
        return {"mu": self.mu, "power": self.power, "index": self.index, "degree": self.degree,
                "coefficient": coef, "class": self.coef_class, "significant": self.significant}


@dataclass
class ExpansionReport:
    profile: dict
    order: int
    mu: list
    terms: list
    stages: list
    final: dict
    kernel_shape: dict
    window: tuple

    def term_rows(self):
        return [t.to_dict() for t in self.terms]

    def to_dict(self):
        return {"profile": self.profile, "order": self.order, "mu": self.mu, "terms": self.term_rows(),
                "stages": self.stages, "final": self.final, "kernel_shape": {str(k): v for k, v in self.kernel_shape.items()},
                "window": list(self.window)}

    def coefficient(self, mu, power, index, tol=1e-9):
        for term in self.terms:
            if abs(term.mu - mu) < tol and term.power == power and term.index == index:
                return term.coefficient
        return 0.0


class _PeriodicCoefficient:
    def __init__(self, values, period, harmonics):
        self.values_ = np.asarray(values)
        self.period = period
        self.harmonics = harmonics

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        w = 2 * np.pi / self.period
        out = self.values_[0] * np.ones_like(t)
        for q in range(1, self.harmonics + 1):
            out = out + self.values_[2 * q - 1] * np.cos(q * w * t) + self.values_[2 * q] * np.sin(q * w * t)
        return out


def _admitted_degrees(index_set, rows):
    """Spherical degrees each element of the index set can carry."""
    gen_degree = {}
    for d, _, rho in rows:
        for j, g in enumerate(index_set.generators):
            if abs(float(g) - float(rho)) < 1e-9:
                gen_degree.setdefault(j, set()).add(d)
    out = []
    for e in index_set.elements:
        degs = set()
        for j in e.kernel:
            degs |= gen_degree.get(j, set())
        cap = -1
        for w, _ in e.witness:
            cap = max(cap, sum(c * max(gen_degree.get(j, {0})) for j, c in w))
        degs |= set(range(cap + 1))
        out.append(degs)
    return out


def _power_budget(index_set, cap=2):
    out, count = [], 0
    for e in index_set.elements:
        if e.resonant:
            count += 1
        out.append(min(count, cap))
    return out


def extract_expansion(source, profile, order, params=None, window=None, cutoff=4.0, t_powers=None,
                      harmonics=4, extra_rates=4, floor=NOISE_FLOOR, check_stages=True):
    """Terms c t^j e^{-mu t} X_i for mu in the index set up to mu_order.

    For every harmonic mode the deviation from the profile is fitted jointly
    with all admissible (mu, j) through mu_{order + extra_rates}; the terms up
    to mu_order are reported and the remainder's decay is checked stage by stage.
    """
    params = params or profile.params
    if order < 0:
        raise StageError("order must be nonnegative")
    window = window or default_window(source)
    t = _grid(source, window)
    D = deviation(source, profile, t)
    basis = D.basis
    periodic = profile.period is not None and params.regime in ("yamabe", "small")
    h = profile.h if params.regime == "middle" else None
    iset = index_set_for(params, cutoff, h, profile if periodic else None)
    mus = iset.values()
    if len(mus) < order + 1:
        raise InsufficientRangeError(f"cutoff {cutoff} leaves fewer than {order + 1} rates")
    rows = kernel_rates(params, basis.max_degree, h, profile if periodic else None)
    degrees = _admitted_degrees(iset, rows)
    budget = _power_budget(iset) if t_powers is None else [t_powers] * len(mus)
    top = min(len(mus), order + extra_rates)
    nh = harmonics if periodic else 0
    w = 2 * np.pi / profile.period if periodic else 0.0
    terms = []
    for i in range(basis.size):
        d = int(basis.degrees[i])
        cols, keys = [], []
        for s in range(top):
            if d not in degrees[s]:
                continue
            for j in range(budget[s] + 1):
                base = t**j * np.exp(-mus[s] * t)
                cols.append(base)
                keys.append((s, j, 0))
                for q in range(1, nh + 1):
                    cols.append(base * np.cos(q * w * t))
                    keys.append((s, j, 2 * q - 1))
                    cols.append(base * np.sin(q * w * t))
                    keys.append((s, j, 2 * q))
        if not cols:
            continue
        A = np.column_stack(cols)
        scale = np.linalg.norm(A, axis=0)
        coef, *_ = np.linalg.lstsq(A / scale, D.coeffs[:, i], rcond=None)
        coef = coef / scale
        groups = {}
        for (s, j, q), c in zip(keys, coef):
            groups.setdefault((s, j), np.zeros(2 * nh + 1))[q] = c
        for (s, j), vals in groups.items():
            if s >= order:
                continue
            size = float(np.max(np.abs(vals)) * t[0] ** j * math.exp(-mus[s] * t[0]))
            if periodic:
                c = _PeriodicCoefficient(vals, profile.period, nh)
                cls = "periodic"
            else:
                c = float(vals[0])
                cls = "constant"
            terms.append(Term(mus[s], j, i, d, c, cls, size > 100 * floor))
    terms.sort(key=lambda x: (x.mu, -x.power, x.index))
    stages = []
    prev = None
    for s in range(order + 1):
        c = D.coeffs.copy()
        for term in terms:
            if s and term.mu <= mus[s - 1] + 1e-12:
                c[:, term.index] -= term.values(t)
        sup = np.max(np.abs(c @ basis.values.T), axis=1)
        rate, const, r2 = _sup_decay(t, sup, floor)
        stage = {"stage": s, "subtracted_through": mus[s - 1] if s else None, "expected": mus[s],
                 "rate": rate, "constant": const, "r_squared": r2}
        stages.append(stage)
        # an infinite previous rate means the remainder already sat below the floor
        if check_stages and prev is not None and math.isfinite(prev) and not rate > prev:
            raise StageError(f"stage {s} did not improve the decay rate ({rate:.4f} <= {prev:.4f})", stages)
        prev = rate
    final = {"rate": stages[-1]["rate"], "constant": stages[-1]["constant"], "window": list(window),
             "expected": mus[order] if order < len(mus) else None}
    kshape = {}
    if order >= 1:
        # a constant coefficient of e^{-t} is Y times the limit of the shape factor
        factor = kernel_shape(profile, t)
        limit = 2.0 if params.regime in ("middle", "large") else float(factor[-1])
        for term in terms:
            if term.degree == 1 and abs(term.mu - 1.0) < 1e-12 and term.power == 0:
                if periodic:
                    kshape[term.index] = float(np.mean(term.values(t) * np.exp(t) / factor))
                else:
                    kshape[term.index] = term.coefficient / limit
    return ExpansionReport(profile.to_dict(), order, mus[: order + 1], terms, stages, final, kshape, tuple(window))
