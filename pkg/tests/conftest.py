import numpy as np
import pytest

from qphase.hilbert import make_qvdp
from qphase.limit_cycle import find_limit_cycle
from qphase.phase_response import backaction_coeffs

QVDP = dict(delta=1.0, gamma_g=0.2, gamma_d=1.0)


@pytest.fixture(scope="session")
def qvdp10():
    return make_qvdp(10, **QVDP)


@pytest.fixture(scope="session")
def cycle10(qvdp10):
    return find_limit_cycle(qvdp10)


@pytest.fixture(scope="session")
def cycle14():
    return find_limit_cycle(make_qvdp(14, **QVDP))


@pytest.fixture(scope="session")
def backaction10(cycle10):
    return backaction_coeffs(cycle10)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def report():
    """Record and print one verdict line per acceptance criterion."""

    def emit(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
