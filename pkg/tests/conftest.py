import sys

import numpy as np
import pytest

from fodkit.sphere import evaluation_grid


@pytest.fixture(scope="session")
def ico4():
    return evaluation_grid()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance lines even when output capture hides them."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section(f"acceptance criteria (reps={mod.REPS})")
        for line in lines:
            terminalreporter.write_line(line)
