import numpy as np
import pytest

from bdfdyn.energy import build_gaussian_source
from bdfdyn.lattice import build_lattice


@pytest.fixture(scope="session")
def small():
    """h = 1, cutoff 1.5: the origin, its 6 neighbours and 12 edge midpoints (M = 19)."""
    return build_lattice(1.0, 1.5)


@pytest.fixture(scope="session")
def tiny():
    """h = 1, cutoff 1: origin plus 6 neighbours (M = 7)."""
    return build_lattice(1.0, 1.0)


@pytest.fixture(scope="session")
def gaussian(small):
    return build_gaussian_source(1.0, 1.0, 0.05, small)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
CRITERIA_LINES = []


@pytest.fixture(scope="session")
def criterion():
    def record(number, title, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        CRITERIA_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)
