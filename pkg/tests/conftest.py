import numpy as np
import pytest
from hypothesis import settings

from kst.config import resolve_model_path
from kst.model import load_model

settings.register_profile("suite", deadline=None, max_examples=60)
settings.load_profile("suite")

# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_RESULTS = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_RESULTS.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def nadia():
    return load_model(resolve_model_path("nadia_like"))


@pytest.fixture(scope="session")
def planar():
    return load_model(resolve_model_path("planar_2r"))


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
