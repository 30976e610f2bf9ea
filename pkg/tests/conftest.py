import numpy as np
import pytest

from siamdiff.diffusion import make_schedule
from siamdiff.ingest import load_toy_set

# lines appended by the acceptance tests, echoed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def toy():
    return load_toy_set()


@pytest.fixture(scope="session")
def sched():
    return make_schedule()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)
