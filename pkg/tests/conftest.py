import random

import pytest
from hypothesis import settings

from remat.graph import make_linear_training

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture(scope="session")
def linear8():
    return make_linear_training(8)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
