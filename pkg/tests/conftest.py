"""Shared fixtures: the four-member two-period reference instance and its prices."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

from recsettle.metering import ingest_signed
from recsettle.settlement import MemberContract
from recsettle.synthetic import reference_contract

DATA = Path(__file__).parent / "data"
TABLE1 = DATA / "table1.csv"


@pytest.fixture(scope="session")
def table1_path() -> Path:
    return TABLE1


@pytest.fixture(scope="session")
def table1():
    return ingest_signed(TABLE1)


@pytest.fixture(scope="session")
def prices() -> MemberContract:
    """Retail 220 / feed-in 60 / local 100 and 98 / deviation 0.1, all €/MWh."""
    return reference_contract()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
