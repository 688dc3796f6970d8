"""Acceptance criteria 1-10, one pass/fail line each.

Formulas with a known error are checked twice: the uncorrected form as a
strict xfail and the corrected form as a normal check.
"""

import pytest

from cylinder_asymptotics import acceptance
from cylinder_asymptotics.cli_io import run

from conftest import ACCEPTANCE_LINES

_results = {}


def criterion(number):
    if number not in _results:
        _results[number] = acceptance.run_criterion(number, seed=0)
    return _results[number]


def report(line):
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.mark.parametrize("number", range(1, 10))
def test_criterion(number):
    r = criterion(number)
    report(f"{r.line()} [{r.seconds:.1f} s]")
    failed = [c for c in r.checks if not c.literal and not c.passed]
    assert not failed, failed
    assert r.budget is None or r.seconds < r.budget


@pytest.mark.xfail(strict=True, reason="exponent e^{+rho0 a0} in the first radial coefficient has the wrong sign")
def test_uncorrected_a1_formula():
    assert criterion(2).check("a1 relative error, e^{+rho0 a0} exponent").passed


@pytest.mark.xfail(strict=True, reason="+a1^2 rho0/4 has the wrong sign for the second radial coefficient")
def test_uncorrected_a2_formula():
    assert criterion(2).check("a2 relative error against +a1^2 rho0/4").passed


@pytest.mark.xfail(strict=True, reason="a unit weight on the pair sum does not balance the Q_k recursion")
def test_uncorrected_qk_recursion():
    assert criterion(5).check("k=4 recursion residual, unit pair weight").passed


def test_corrected_formulas():
    assert criterion(2).check("a1 relative error").passed
    assert criterion(2).check("a2 relative error against -a1^2 rho0/4").passed
    assert criterion(5).check("k=4 recursion residual").passed


def test_criterion_10_verify_is_deterministic(tmp_path, capsys):
    out = tmp_path / "verify"
    first = {}
    for attempt in range(2):
        assert run(["verify", "--out", str(out), "--seed", "0"]) == 0
        artifacts = {name: (out / name).read_bytes() for name in ("report.json", "table.csv", "plotdata.csv")}
        if attempt == 0:
            first = artifacts
    capsys.readouterr()
    same = artifacts == first
    report(f"criterion 10: {'PASS' if same else 'FAIL'} verify twice with the same seed gives byte-identical reports")
    assert same
