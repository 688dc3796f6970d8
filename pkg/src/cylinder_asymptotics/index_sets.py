"""Index sets of admissible decay rates and the processing order of the expansion.

Rates are kept as Fractions when they are rational (every rate of the large
regime at n = 3, and all rho_0 multiples); otherwise floats compared with
RATE_TOL.
"""

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ArtifactError, BudgetError, DomainError, RegimeError
from .radial_core import middle_slope
from .sphere_spectral import eigenvalue, harmonic_dimension

RATE_TOL = 1e-9
SEARCH_BUDGET = 2_000_000


def _exactify(x):
    """A Fraction when x is within 1e-13 of a small-denominator rational, else the float."""
    if isinstance(x, Fraction):
        return x
    f = Fraction(x).limit_denominator(720)
    if abs(float(f) - x) < 1e-13:
        return f
    return float(x)


def _same(a, b):
    if isinstance(a, Fraction) and isinstance(b, Fraction):
        return a == b
    return abs(float(a) - float(b)) < RATE_TOL


@dataclass(frozen=True)
class IndexElement:
    """value: the rate; kernel lists generator positions equal to it; each witness is
    ((position, multiplicity), ...), m0) with m0 the multiple of the regime's extra
    generator; extra is the m0 of the simplest witness."""

    value: object
    kernel: tuple
    witness: tuple
    extra: int
    resonant: bool

    @property
    def is_kernel(self):
        return bool(self.kernel)

    @property
    def is_nonlinear(self):
        return bool(self.witness)

    def to_dict(self):
        return {"value": float(self.value), "kernel": list(self.kernel),
                "witness": [{"factors": [list(f) for f in w], "extra": m0} for w, m0 in self.witness], "extra": self.extra, "resonant": self.resonant}


@dataclass(frozen=True)
class IndexSet:
    regime: str
    generators: tuple
    extra: object
    cutoff: float
    elements: tuple
    degrees: tuple = field(default=(), repr=False)

    def values(self):
        return [float(e.value) for e in self.elements]

    def kernel_values(self):
        return [float(e.value) for e in self.elements if e.is_kernel]

    def nonlinear_values(self):
        return [float(e.value) for e in self.elements if e.is_nonlinear]

    def to_rows(self):
        return [e.to_dict() for e in self.elements]


def kernel_rates(params, max_degree, h=None, profile=None):
    """[(degree, lambda, rho)] for spherical degrees 1..max_degree."""
    n, k = params.n, params.k
    out = []
    for d in range(1, max_degree + 1):
        lam = eigenvalue(n, d)
        if params.regime == "large":
            # rho = sqrt((n/2k)^2 + (n-k)(lam-n+1)/(k(n-1))) + 1 - n/2k
            rad = Fraction(n * n, 4 * k * k) + Fraction((n - k) * (lam - n + 1), k * (n - 1))
            root = _sqrt_fraction(rad)
            rho = root + 1 - Fraction(n, 2 * k)
        elif params.regime == "middle":
            rho = _sqrt_fraction(Fraction(lam, n - 1))
        elif profile is not None and profile.period:
            from .linear_ode_kit import kernel_for_mode

            lo = float(profile.t[0]) + 1.0
            hi = min(float(profile.t[-1]), lo + 4 * profile.period)
            rho = _exactify(kernel_for_mode(profile, d, float(lam), (lo, hi)).rho)
        else:
            from .linear_ode_kit import predicted_rates

            rho = _exactify(predicted_rates(params, lam, h)[0])
        out.append((d, lam, rho))
    return out


def _sqrt_fraction(q):
    num, den = q.numerator, q.denominator
    rn, rd = math.isqrt(num), math.isqrt(den)
    if rn * rn == num and rd * rd == den:
        return Fraction(rn, rd)
    return math.sqrt(float(q))


def rates_by_index(params, max_degree, h=None, profile=None):
    """Kernel rates listed per eigenfunction X_1, X_2, ... (degree multiplicity expanded)."""
    rows = []
    for d, lam, rho in kernel_rates(params, max_degree, h, profile):
        rows += [(d, lam, rho)] * harmonic_dimension(params.n, d)
    return rows


def _extra_generator(params, h):
    if params.regime == "large":
        return Fraction(2 * params.k - params.n, params.k)
    if params.regime == "middle":
        if h is None:
            raise DomainError("middle regime needs h")
        return _exactify(params.n * middle_slope(params, h))
    return None


def _distinct(values):
    gens = []
    for v in sorted(values, key=float):
        if not any(_same(v, g) for g in gens):
            gens.append(v)
    return gens


def _combination_budget(gens, cutoff, extra, regime):
    lo = min(float(g) for g in gens)
    if regime == "large":
        r = float(extra)
        if lo <= r:
            raise DomainError("kernel rates must exceed rho_0")
        return int(math.floor((cutoff - r) / (lo - r) + 1e-12))
    return int(math.floor(cutoff / lo + 1e-12))


def _extra_range(regime, extra, count, base, cutoff):
    """Admissible multiples of the extra generator for `count` kernel factors summing to base."""
    if extra is None:
        return [0]
    e = float(extra)
    top = int(math.floor((cutoff - float(base)) / e + 1e-12))
    low = -(count - 1) if regime == "large" else 0
    return list(range(low, max(top, 0) + 1))


def build_index_set(regime, rates, cutoff=4.0, extra=None, degrees=None):
    """Enumerate sum m_i rho_i (+ m_0 extra) up to cutoff.

    rates are the kernel rates rho_1, rho_2, ... (duplicates allowed). The
    extra generator (n*slope in the middle regime, rho_0 in the large regime)
    never appears without a kernel factor. In the large regime its multiple may
    be negative, down to -(number of factors - 1), and everything below 1 is
    discarded.
    """
    if regime not in ("yamabe", "small", "middle", "large"):
        raise RegimeError(f"unknown regime {regime!r}")
    rates = [_exactify(r) for r in rates]
    if any(float(r) <= 0 for r in rates):
        raise DomainError("kernel rates must be positive")
    if regime in ("middle", "large") and extra is None:
        raise DomainError(f"{regime} regime needs its extra generator")
    extra = None if extra is None else _exactify(extra)
    gens = _distinct([r for r in rates if float(r) <= cutoff + RATE_TOL]) or _distinct(rates)[:1]
    floor = 1.0 if regime == "large" else 0.0
    max_count = _combination_budget(gens, cutoff, extra, regime)
    found = {}

    def add(value, kernel, witness, m0):
        if float(value) > cutoff + RATE_TOL or float(value) < floor - RATE_TOL:
            return
        for key in found:
            if _same(key, value):
                rec = found[key]
                break
        else:
            rec = found.setdefault(value, {"kernel": set(), "witness": set(), "extra": None})
        if kernel is not None:
            rec["kernel"].add(kernel)
        if witness is not None:
            rec["witness"].add((witness, m0))

    for j, g in enumerate(gens):
        add(g, j, None, 0)
    steps = 0
    for count in range(1, max_count + 1):
        for combo in itertools.combinations_with_replacement(range(len(gens)), count):
            steps += 1
            if steps > SEARCH_BUDGET:
                raise BudgetError("index-set search exceeded its budget; lower the cutoff")
            base = sum((gens[j] for j in combo), Fraction(0) if all(isinstance(gens[j], Fraction) for j in combo) else 0.0)
            if regime != "large" and float(base) > cutoff + RATE_TOL:
                continue
            witness = tuple(sorted((j, combo.count(j)) for j in set(combo)))
            for m0 in _extra_range(regime, extra, count, base, cutoff):
                if count == 1 and m0 == 0:
                    continue
                value = base + m0 * extra if m0 else base
                add(value, None, witness, m0)
    elements = []
    for value in sorted(found, key=float):
        rec = found[value]
        wit = sorted(rec["witness"], key=lambda w: (sum(c for _, c in w[0]), w[1], w[0]))
        elements.append(IndexElement(value, tuple(sorted(rec["kernel"])), tuple(wit),
                                     wit[0][1] if wit else 0, bool(rec["kernel"]) and bool(wit)))
    return IndexSet(regime, tuple(gens), extra, float(cutoff), tuple(elements), tuple(degrees or ()))


def index_set_for(params, cutoff=4.0, h=None, profile=None, max_degree=None):
    """The regime's index set with kernel rates computed from (n, k) (and the profile when periodic)."""
    if max_degree is None:
        max_degree = 1
        while max_degree < 40:
            rows = kernel_rates(params, max_degree + 1, h, profile)
            if float(rows[-1][2]) > cutoff:
                break
            max_degree += 1
    rows = kernel_rates(params, max_degree, h, profile)
    rates = [r for _, _, r in rows]
    return build_index_set(params.regime, rates, cutoff, _extra_generator(params, h), [d for d, _, _ in rows])


def oracle_values(regime, rates, cutoff=4.0, extra=None):
    """Independent brute force: every multiplicity vector over the distinct rates, in lexicographic order."""
    vals = sorted({float(r) for r in rates})
    gens = []
    for v in vals:
        if not gens or abs(v - gens[-1]) > RATE_TOL:
            gens.append(v)
    gens = [g for g in gens if g <= cutoff + RATE_TOL] or gens[:1]
    e = None if extra is None else float(extra)
    floor = 1.0 if regime == "large" else 0.0
    bounds = []
    for g in gens:
        if regime == "large":
            bounds.append(int((cutoff - e) / (g - e)) + 1)
        else:
            bounds.append(int(cutoff / g) + 1)
    out = []
    for ms in itertools.product(*[range(b + 1) for b in bounds]):
        count = sum(ms)
        if count == 0:
            continue
        base = sum(m * g for m, g in zip(ms, gens))
        extras = [0]
        if e is not None:
            lo = -(count - 1) if regime == "large" else 1
            extras = [0] + [m for m in range(lo, int((cutoff - base) / e) + 2) if m != 0]
        for m0 in extras:
            v = base + m0 * e if m0 else base
            if floor - RATE_TOL <= v <= cutoff + RATE_TOL:
                out.append(v)
    merged = []
    for v in sorted(out):
        if not merged or v - merged[-1] > RATE_TOL:
            merged.append(v)
    return merged


def compare_with_oracle(index_set, rates):
    ours = index_set.values()
    ref = oracle_values(index_set.regime, rates, index_set.cutoff, index_set.extra)
    missing = [v for v in ref if not any(abs(v - w) < RATE_TOL for w in ours)]
    extra = [v for v in ours if not any(abs(v - w) < RATE_TOL for w in ref)]
    return {"missing": missing, "extra": extra, "count": len(ours), "passed": not missing and not extra}


def mu_sequence(index_set):
    vals = index_set.values()
    if not vals or abs(vals[0] - 1.0) > RATE_TOL:
        raise ArtifactError(f"index set does not start at 1: {vals[:3]}")
    return vals


def witness_check(index_set):
    """Max |value - witness combination| over all nonlinear witnesses."""
    worst = 0.0
    for e in index_set.elements:
        for w, m0 in e.witness:
            total = sum(c * float(index_set.generators[j]) for j, c in w)
            worst = max(worst, abs(float(e.value) - total - m0 * float(index_set.extra or 0)))
    return worst


@dataclass(frozen=True)
class ScheduleStep:
    kind: str
    value: float
    rates: tuple = ()
    K: int = None
    M: int = None
    degree_cap: int = None
    resonant: bool = False
    t_power: int = 0

    def to_dict(self):
        return {"kind": self.kind, "value": self.value, "rates": list(self.rates), "K": self.K, "M": self.M,
                "degree_cap": self.degree_cap, "resonant": self.resonant, "t_power": self.t_power}


def _index_of_degree(n, degree):
    """Largest basis index whose degree is <= degree (X_0 is the constant)."""
    return sum(harmonic_dimension(n, d) for d in range(degree + 1)) - 1


def interleave_schedule(params, rows, cutoff=4.0):
    """Alternating blocks of kernel rates and nonlinear rates rho~ = sum n_j rho_j (sum n_j >= 2).

    rows are rates_by_index output (one entry per eigenfunction). Each nonlinear
    rate carries K (max sum j n_j over representations, j the eigenfunction
    index), M (largest index with degree <= K) and the sharper degree_cap
    (max sum n_j deg X_j). A kernel rate that is also a nonlinear rate is a
    resonance and raises the t-power budget of everything after it.
    """
    n = params.n
    kern = [(j + 1, d, _exactify(r)) for j, (d, _, r) in enumerate(rows) if float(r) <= cutoff + RATE_TOL]
    distinct = _distinct([r for _, _, r in kern])
    nonlinear = {}
    by_value = {v: [(j, d) for j, d, r in kern if _same(r, v)] for v in distinct}
    max_count = int(cutoff // 1)
    for count in range(2, max_count + 1):
        for combo in itertools.combinations_with_replacement(range(len(distinct)), count):
            value = sum((distinct[i] for i in combo), Fraction(0) if all(isinstance(distinct[i], Fraction) for i in combo) else 0.0)
            if float(value) > cutoff + RATE_TOL:
                continue
            # with several eigenfunctions per rate, K puts the weight on the largest index and
            # degree_cap on the largest degree
            K = sum(max(j for j, _ in by_value[distinct[i]]) for i in combo)
            D = sum(max(d for _, d in by_value[distinct[i]]) for i in combo)
            key = next((k for k in nonlinear if _same(k, value)), value)
            K0, D0 = nonlinear.get(key, (0, 0))
            nonlinear[key] = (max(K0, K), max(D0, D))
    events = [("kernel", v) for v in distinct] + [("nonlinear", v) for v in nonlinear]
    events.sort(key=lambda e: (float(e[1]), e[0] == "nonlinear"))
    steps = []
    budget = 0
    block = []
    for kind, v in events:
        if kind == "kernel":
            block.append(float(v))
            continue
        if block:
            steps.append(ScheduleStep("kernel", block[0], tuple(block), t_power=budget))
            block = []
        res = any(_same(v, r) for r in distinct)
        if res:
            budget += 1
        K, D = nonlinear[v]
        steps.append(ScheduleStep("nonlinear", float(v), (), K, _index_of_degree(n, K), D, res, budget))
    if block:
        steps.append(ScheduleStep("kernel", block[0], tuple(block), t_power=budget))
    return steps


def has_t_powers(schedule):
    return any(s.resonant for s in schedule)
