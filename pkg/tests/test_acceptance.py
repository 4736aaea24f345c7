"""Acceptance criteria at full scale, one test per criterion.

Set PUSHDOWN_ACCEPT_QUICK=1 for a reduced-size pass while developing; the
verdicts are then indicative only.  Each criterion's verdict line is printed
in the terminal summary.
"""
import os

import pytest

from pushdown import acceptance

QUICK = os.environ.get("PUSHDOWN_ACCEPT_QUICK") == "1"
VERDICTS = []

CASES = [
    (acceptance.check_ski_rental, False),
    (acceptance.check_lossy_counting, False),
    (acceptance.check_balance, False),
    (acceptance.check_cache, False),
    (acceptance.check_dh, True),
    (acceptance.check_ch, True),
    (acceptance.check_dch, True),
    (acceptance.check_orderings, True),
    (acceptance.check_drift, True),
    (acceptance.check_determinism, True),
]


@pytest.mark.slow
@pytest.mark.parametrize("check, simulated", CASES, ids=[
    "c01_ski_rental", "c02_lossy_counting", "c03_balance_solver", "c04_cache_oracle",
    "c05_dh_trend", "c06_ch_trend", "c07_dch_trend", "c08_universal_orderings",
    "c09_drift_adaptivity", "c10_determinism"])
def test_criterion(check, simulated):
    result = check(QUICK) if simulated else check()
    line = result.line()
    VERDICTS.append(line)
    print(line)
    assert result.passed, line
