import numpy as np
import pytest
from hypothesis import settings

from fraccomp.geometry import FractionalParams, ScalarField, build_hemisphere_grid

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

S_VALUES = (0.25, 0.5, 0.75)


@pytest.fixture(scope="session")
def grid_cache():
    cache = {}

    def get(n_theta, n_phi, s):
        key = (n_theta, n_phi, s)
        if key not in cache:
            cache[key] = build_hemisphere_grid(n_theta, n_phi, FractionalParams(s))
        return cache[key]

    return get


def random_field(grid, rng, low=0.0):
    vals = low + rng.random(grid.shape)
    vals[-1] = vals[-1, 0]
    return ScalarField(grid, vals)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
