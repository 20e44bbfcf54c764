"""Acceptance suite: one PASS/FAIL line per criterion, printed even under capture.

Run standalone with ``python3 tests/test_acceptance.py`` or ``treespin verify``.
"""

import pytest

from treespin.acceptance import CRITERIA, format_report, run_suite

SEED = 0


@pytest.fixture(scope="module")
def runs():
    first = run_suite(SEED)
    second = run_suite(SEED)
    return first, second


def _show(capsys, line, details=()):
    with capsys.disabled():
        print("\n" + line)
        for d in details:
            print("    " + d)


@pytest.mark.parametrize("number", range(1, len(CRITERIA) + 1))
def test_criterion(runs, capsys, number):
    res = runs[0][number - 1]
    assert res.number == number
    _show(capsys, f"[{'PASS' if res.passed else 'FAIL'}] {res.number}. {res.title}", res.lines)
    assert res.passed


def test_criterion_11_determinism(runs, capsys):
    first, second = runs
    same = format_report(first, SEED) == format_report(second, SEED)
    _show(capsys, f"[{'PASS' if same else 'FAIL'}] 11. determinism (second run byte-identical: {same})")
    assert same


if __name__ == "__main__":
    from treespin.acceptance import verify

    report, ok = verify(SEED)
    print(report, end="")
    raise SystemExit(0 if ok else 1)
