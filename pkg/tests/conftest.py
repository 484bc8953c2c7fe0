import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracflow.kernels import FractionalOrder
from fracflow.profiles import make_profile

settings.register_profile(
    "fracflow",
    deadline=None,
    max_examples=int(os.environ.get("FRACFLOW_HYPOTHESIS_EXAMPLES", "25")),
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("fracflow")

TWO_PI = 2.0 * math.pi

# PASS/FAIL lines from the acceptance suite, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def order1():
    return FractionalOrder(0.5, 2)


@pytest.fixture
def order2():
    return FractionalOrder(0.5, 3)


def cos_grid(eps=1e-3, n=128, alpha=None):
    """``eps cos x`` on a periodic ``2 pi`` box (unit wavenumber)."""
    return make_profile("cosine", 1, n, TWO_PI / n, amplitude=eps)


def rel(a, b):
    return np.max(np.abs(np.asarray(a) - np.asarray(b))) / max(np.max(np.abs(b)), 1e-300)
