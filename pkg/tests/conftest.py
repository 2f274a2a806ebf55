import numpy as np
import pytest

from dcfg import AnalyticBackend, build_schedule, builtin_world, make_grid


@pytest.fixture(scope="session")
def world2():
    return builtin_world("two_binary")


@pytest.fixture(scope="session")
def sched50():
    return build_schedule("linear", 50)


@pytest.fixture(scope="session")
def backend2(world2, sched50):
    return AnalyticBackend(world2, sched50)


@pytest.fixture(scope="session")
def grid50(sched50):
    return make_grid(sched50.steps, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
