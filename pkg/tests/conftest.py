import numpy as np
import pytest

from kernattn.numcore import Rng


@pytest.fixture
def rng():
    return Rng(20240611)


@pytest.fixture
def nprng():
    return np.random.default_rng(7)


_ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_log():
    """Record the PASS/FAIL line of one acceptance criterion."""

    def log(number, passed, detail):
        _ACCEPTANCE_LINES[number] = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"

    return log


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
