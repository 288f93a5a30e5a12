import numpy as np
import pytest

from magtorus.lab.validate import example_models
from magtorus.model import MagneticModel, TwoForm, exterior_derivative
from magtorus.trigpoly import TrigPoly


def tp(dim, *modes):
    return TrigPoly.from_modes(dim, modes)


@pytest.fixture(scope="session")
def bundled():
    return example_models()


@pytest.fixture(scope="session")
def coupled_n2():
    """n = 2 model with nonconstant lambda and an alpha tied to lambda's variable."""
    lam = tp(2, ((0, 0), 1.0, 0.0), ((1, 0), 0.25, 0.1), ((1, 1), 0.05, 0.0))
    alpha = [tp(2, ((0, 1), 0.2, 0.0)), tp(2, ((1, 0), 0.3, 0.3))]
    beta = exterior_derivative(alpha) + TwoForm.constant(np.array([[0.0, 0.7], [-0.7, 0.0]]))
    return MagneticModel.build(lam, beta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
