"""One test per acceptance criterion, at the tolerances in ``permot.acceptance``.

Each result line is also collected for the terminal summary, so a plain
``pytest -v`` run shows a PASS/FAIL line with the measured values for every
criterion.
"""
import pytest

from permot import acceptance

RESULTS = []


@pytest.mark.parametrize("number", sorted(acceptance.CRITERIA),
                         ids=lambda n: f"{n:02d}-{acceptance.CRITERIA[n].__name__}")
def test_criterion(number):
    res = acceptance.CRITERIA[number]()
    RESULTS.append(res)
    print(res.line())
    assert res.passed, res.line()
