import numpy as np
import pytest

from ssh_ehrenfest.groundstate import hessian_and_modes, optimize_geometry
from ssh_ehrenfest.model import SshParams


@pytest.fixture(scope="session")
def params4():
    return SshParams()


@pytest.fixture(scope="session")
def geom4(params4):
    return optimize_geometry(params4)


@pytest.fixture(scope="session")
def modes4(params4, geom4):
    return hessian_and_modes(params4, geom4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
