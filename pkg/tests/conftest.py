import numpy as np
import pytest

from tgf_cda.grid import DomainSpec, VelocityField, random_field

TWO_PI = 2 * np.pi


@pytest.fixture
def dom32():
    return DomainSpec(32, TWO_PI)


@pytest.fixture
def dom64():
    return DomainSpec(64, TWO_PI)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def shear(dom, amp=1.0, k=1):
    kk = TWO_PI / dom.L * k
    return VelocityField.from_function(dom, lambda x, y: (amp * np.sin(kk * y), 0 * y))


def random_div_free(dom, seed, kmax=6, energy=1.0):
    return random_field(dom, np.random.default_rng(seed), kmax=kmax, energy=energy)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
