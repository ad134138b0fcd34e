import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chern_calabi.lattice import Grid, random_bandlimited
from chern_calabi.metricgen import conformal_metric, random_pluriclosed

settings.register_profile(
    "default", max_examples=15, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid1():
    return Grid(1, 64)


@pytest.fixture(scope="session")
def grid2():
    return Grid(2, 16)


@pytest.fixture(scope="session")
def pluriclosed(grid2):
    return random_pluriclosed(grid2, 3, 0.1, 4)


@pytest.fixture(scope="session")
def conformal(grid1):
    return conformal_metric(grid1, random_bandlimited(5, 0.3, 8, grid1))
