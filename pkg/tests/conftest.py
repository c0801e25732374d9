import numpy as np
import pytest
from hypothesis import settings

from eikopath import examples as ex
from eikopath import metric as mt

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def induced_mu1():
    return ex.build_induced_metric(ex.RadialPotential.decaying(mu=1.0))


@pytest.fixture(scope="session")
def bracket():
    return mt.radial_block_metric(mt.BracketProfile(0.5, 0.5), 2)


@pytest.fixture(scope="session")
def spiral():
    return ex.build_spiral_metric(ex.SpiralConfig(eps=0.05))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
