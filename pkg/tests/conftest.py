import numpy as np
import pytest

from fieldkalman.pinhole_sim import PinholeScenario, precompute, system_model
from fieldkalman.riccati import DareProblem, solve_dare

# reference steady state, 4 decimals
P_PRIOR_REF = np.array([[1.2018, 0.2019], [0.2019, 0.0695]])
P_POST_REF = np.array([[0.8475, 0.1424], [0.1424, 0.0595]])


@pytest.fixture(scope="session")
def scenario():
    return PinholeScenario()


@pytest.fixture(scope="session")
def model(scenario):
    return system_model(scenario)


@pytest.fixture(scope="session")
def precomp(scenario):
    return precompute(scenario)


@pytest.fixture(scope="session")
def steady(scenario, precomp):
    return solve_dare(DareProblem(scenario.A, precomp.G, scenario.Q))


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary and return the verdict."""
    lines = request.config.stash[ACCEPTANCE]

    def record(name, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
