import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def scalar_setup(h=1.0, m=1.0, u=1.0):
    """One BS, one single-antenna UE, one stream."""
    H = np.full((1, 1, 1, 1), h, dtype=complex)
    M = np.full((1, 1, 1, 1), m, dtype=complex)
    U = np.full((1, 1, 1), u, dtype=complex)
    return H, M, U


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
