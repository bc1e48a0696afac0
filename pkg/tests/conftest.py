import numpy as np
import pytest

from gnnoma.dataset import generate_dataset
from gnnoma.population import PopulationConfig, generate_population


@pytest.fixture(scope="session")
def small_population():
    return generate_population(PopulationConfig(count=12, seed=7))


@pytest.fixture(scope="session")
def small_records():
    return generate_dataset(PopulationConfig(count=6, seed=11), keep_history=True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[CRITERIA] = {}


@pytest.fixture
def record_criterion(request):
    """Record one acceptance verdict; all verdicts are echoed in the run summary."""
    def record(number: int, passed: bool, detail: str):
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} - {detail}"
        request.config.stash[CRITERIA][number] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
