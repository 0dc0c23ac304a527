import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dulqa.ising import IsingInstance, generate_sk

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def two_spin(j=1.0, h=(0.0, 0.0)):
    return IsingInstance(np.array([[0.0, j], [j, 0.0]]), np.array(h, dtype=float))


@pytest.fixture
def sk20():
    return generate_sk(20, 1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
