import numpy as np
import pytest

from didc.rbd import load_model
from didc.rbd.checks import random_state  # noqa: F401  (shared by test modules)


@pytest.fixture(scope="session")
def model():
    return load_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
