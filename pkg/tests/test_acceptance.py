"""Acceptance criteria at their full budgets and stated tolerances.

Each test prints one status line; the lines are repeated in the terminal
summary. Criterion 7 is a known failure (see README) and is marked as a
strict xfail so that an unexpected pass is reported too.
"""

import pytest

from fkspde.acceptance import CRITERIA, PASS, run_criterion

KNOWN_FAILURES = {
    "7": "moment-in-k exponent measures about 1.84 against the required 1.90 lower bound",
}

LINES = []


def _param(cid):
    marks = [pytest.mark.acceptance, pytest.mark.slow]
    if cid in KNOWN_FAILURES:
        marks.append(pytest.mark.xfail(reason=KNOWN_FAILURES[cid], strict=True))
    return pytest.param(cid, marks=marks, id=f"criterion_{cid}")


@pytest.mark.parametrize("cid", [_param(c) for c in CRITERIA])
def test_criterion(cid):
    res = run_criterion(cid, scale=1.0, workers=1)
    line = res.line()
    LINES.append(line)
    print(line)
    assert res.status == PASS, line
