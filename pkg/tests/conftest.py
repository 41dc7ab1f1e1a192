import numpy as np
import pytest

from ensemblecast.griddata import (
    DatasetSplit,
    DayRange,
    compute_norm_stats,
    make_synthetic_dataset,
    domain_grid,
    regular_grid,
)
from ensemblecast.mesh import build_hier_mesh
from ensemblecast.stepper import StepContext

SPLIT = DatasetSplit(DayRange(0, 120), DayRange(120, 150), DayRange(150, 200))


@pytest.fixture(scope="session")
def grid32():
    return domain_grid(32, 32)


@pytest.fixture(scope="session")
def series32(grid32):
    return make_synthetic_dataset(grid32, 200, seed=0)


@pytest.fixture(scope="session")
def ctx32(series32):
    stats = compute_norm_stats(series32, SPLIT)
    return StepContext(series32.grid, stats, series32.values("bathymetry")[0])


@pytest.fixture(scope="session")
def small_series():
    """8x8 coastal grid, 40 days: cheap enough for finite differences."""
    grid = domain_grid(8, 8)
    return make_synthetic_dataset(grid, 40, seed=3)


@pytest.fixture(scope="session")
def small_ctx(small_series):
    split = DatasetSplit(DayRange(0, 30), DayRange(30, 35), DayRange(35, 40))
    stats = compute_norm_stats(small_series, split)
    mesh = build_hier_mesh(small_series.grid, (4, 2))
    return StepContext(small_series.grid, stats, small_series.values("bathymetry")[0], mesh)


@pytest.fixture
def one_cell_grid():
    return regular_grid(1, 1, bounds=(30.0, 30.0, -10.0, -10.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from .test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda t: int(t.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
