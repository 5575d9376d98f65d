import pytest

from plgs.limit_solver import find_Q
from plgs.model import PotentialSpec, RadialGrid, make_params


@pytest.fixture(scope="session")
def params15():
    return make_params(1.5, 2)


@pytest.fixture(scope="session")
def Q15(params15):
    return find_Q(params15)


@pytest.fixture(scope="session")
def Q23():
    return find_Q(make_params(2.0, 3))


@pytest.fixture(scope="session")
def harmonic():
    return PotentialSpec.radial_power(2.0)


@pytest.fixture(scope="session")
def coarse_radial():
    # cheap grid for behavioural minimiser tests away from a*
    return RadialGrid.with_spacing(6.0, 0.01, 2)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
