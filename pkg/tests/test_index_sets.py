from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from cylinder_asymptotics.errors import ArtifactError, DomainError, RegimeError
from cylinder_asymptotics.index_sets import (
    build_index_set, compare_with_oracle, has_t_powers, index_set_for, interleave_schedule, kernel_rates,
    mu_sequence, oracle_values, rates_by_index, witness_check,
)
from cylinder_asymptotics.radial_core import make_params


def test_large_example_n3_k2():
    s = index_set_for(make_params(3, 2), 3.0)
    assert s.values() == [1.0, 1.5, 2.0, 2.5, 3.0]
    assert s.extra == Fraction(1, 2)
    # every rate past the first is both a kernel rate and a combination
    assert s.nonlinear_values() == [1.5, 2.0, 2.5, 3.0]
    assert all(e.resonant for e in s.elements[1:])
    assert witness_check(s) == 0.0


def test_kernel_rates_n3_k2():
    rows = kernel_rates(make_params(3, 2), 3)
    assert [(d, lam, r) for d, lam, r in rows] == [(1, 2, 1), (2, 6, Fraction(3, 2)), (3, 12, 2)]
    # one row per eigenfunction: 3 of degree 1, 5 of degree 2
    assert len(rates_by_index(make_params(3, 2), 2)) == 8


def test_yamabe_and_middle_sets():
    assert index_set_for(make_params(3, 1), 3.0).values() == pytest.approx([1.0, 2.0, 5**0.5, 3.0])
    mid = index_set_for(make_params(4, 2), 2.0, h=0.5)
    assert mid.values() == pytest.approx([1.0, (8 / 3) ** 0.5, 2.0])
    with pytest.raises(DomainError):
        index_set_for(make_params(4, 2), 2.0)


@pytest.mark.parametrize("nk,h", [((3, 1), None), ((4, 1), None), ((5, 2), None), ((4, 2), 0.5), ((3, 2), None),
                                  ((5, 3), None), ((6, 4), None)])
def test_regime_sets_match_oracle(nk, h):
    p = make_params(*nk)
    s = index_set_for(p, 4.0, h=h)
    rates = [r for _, _, r in kernel_rates(p, len(s.generators) + 2, h)]
    assert compare_with_oracle(s, rates)["passed"]


rate_lists = st.lists(st.integers(5, 24).map(lambda m: Fraction(m, 8)), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(rates=rate_lists, regime=st.sampled_from(["small", "yamabe", "middle", "large"]),
       extra=st.integers(2, 6).map(lambda m: Fraction(m, 8)))
def test_enumeration_matches_brute_force(rates, regime, extra):
    if regime == "large":
        rates = [r + 1 for r in rates]
    e = extra if regime in ("middle", "large") else None
    s = build_index_set(regime, rates, 3.5, e)
    assert oracle_values(regime, rates, 3.5, e) == pytest.approx(s.values(), abs=1e-12)
    assert witness_check(s) < 1e-12


def test_input_errors():
    with pytest.raises(RegimeError):
        build_index_set("other", [1.0])
    with pytest.raises(DomainError):
        build_index_set("small", [0.0, 1.0])
    with pytest.raises(DomainError):
        build_index_set("large", [1.0])
    with pytest.raises(DomainError):
        build_index_set("large", [0.4, 1.0], extra=0.5)


def test_mu_sequence_requires_unit_start():
    assert mu_sequence(index_set_for(make_params(3, 2), 2.0))[0] == 1.0
    with pytest.raises(ArtifactError):
        mu_sequence(build_index_set("small", [1.5], 3.0))


def test_schedule_n3_k2():
    p = make_params(3, 2)
    steps = interleave_schedule(p, rates_by_index(p, 3), 3.0)
    assert [s.kind for s in steps] == ["kernel", "nonlinear", "nonlinear", "nonlinear"]
    assert steps[0].rates == (1.0, 1.5, 2.0)
    first = steps[1]
    # 2 = 1 + 1 resonates with the degree-3 kernel rate
    assert first.value == 2.0 and first.resonant and first.t_power == 1
    assert first.degree_cap == 2 and first.K == 6 and first.M == 48
    assert has_t_powers(steps)


def test_schedule_without_resonance():
    p = make_params(5, 2)
    steps = interleave_schedule(p, rates_by_index(p, 2), 2.5)
    assert steps[0].kind == "kernel"
    assert all(s.t_power == 0 for s in steps) == (not has_t_powers(steps))
