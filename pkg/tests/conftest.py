import numpy as np
import pytest

from stbell import engine, kernel
from stbell.rng import RngSpec


@pytest.fixture(params=sorted(kernel.BACKENDS))
def backend(request):
    return request.param


@pytest.fixture(scope="session")
def spacetime_log():
    return engine.simulate(100_000, RngSpec(20240917), engine.SPACETIME)


@pytest.fixture(scope="session")
def spatial_log():
    return engine.simulate(100_000, RngSpec(31337), engine.SPATIAL)


@pytest.fixture
def nprng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, config):
    from test_acceptance import ACCEPTANCE_KEY

    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
