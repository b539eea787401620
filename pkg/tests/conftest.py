import numpy as np
import pytest
from hypothesis import settings

import stochavg as sa

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dd_model():
    return sa.build_model("damped_driven")


@pytest.fixture(scope="session")
def rule8():
    return sa.make_quadrature(2, 8)


@pytest.fixture(scope="session")
def rule32():
    return sa.make_quadrature(2, 32)


def random_states(rng, N, n, scale=1.0):
    return scale * (rng.normal(size=(N, n)) + 1j * rng.normal(size=(N, n)))


# one line per acceptance criterion, filled by test_acceptance and echoed at the end
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
