import numpy as np
import pytest

from rescale.killing import certify, kappa_from_pi
from rescale.oracle import Oracle
from rescale.torus import FourierField, trimodal


@pytest.fixture(scope="session")
def zero_drift():
    return FourierField.constant(0.0, 1)


@pytest.fixture(scope="session")
def fig1_kappa(zero_drift):
    """Certified killing rate of the trimodal circle experiment (K = 1.75)."""
    return certify(kappa_from_pi(trimodal(1), zero_drift, 1.75), offset_K=1.75)


@pytest.fixture(scope="session")
def fig1_oracle(zero_drift, fig1_kappa):
    return Oracle(zero_drift, fig1_kappa, 200)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    """Store and print the one-line verdict of an acceptance criterion."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
