import sys

import numpy as np
import pytest
from hypothesis import settings

from envyloc.instance import Instance, Regime, generate_instance

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

GRID_M = (6, 8, 10)
GRID_P = (2, 3)
GRID_SEEDS = (1, 2, 3)


def grid_instances(Ms=GRID_M, ps=GRID_P, seeds=GRID_SEEDS):
    return [generate_instance(s, M, p, r) for M in Ms for p in ps for r in Regime for s in seeds]


def cyclic_instance(p: int = 1) -> Instance:
    """Row i ranks site i first, then i+1, i+2 (mod 3)."""
    ranks = np.array([[1, 2, 3], [3, 1, 2], [2, 3, 1]])
    return Instance(3, p, Regime.RANDOM_PREFS, 0, ranks)


@pytest.fixture
def cyclic():
    return cyclic_instance()


@pytest.fixture(scope="session")
def small_grid():
    return grid_instances(Ms=(6, 8), seeds=(1,))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
