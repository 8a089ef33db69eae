"""
Shared fixtures: seeded generators, small grids and decompositions
"""

import numpy as np
import pytest

from discretization.decomposition import SplitMode, build_decomposition
from discretization.grid import GridFunction, build_grid
from discretization.operators import ProblemSpec
from experiments.config import ExperimentConfig


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def unit_grid():
    """5 x 5 nodes on [0,1]^2"""
    return build_grid(5, 5, (0.0, 1.0, 0.0, 1.0))


@pytest.fixture
def grid21():
    return build_grid(21, 21)


@pytest.fixture
def strip_decomposition(grid21):
    """3 x 1 strips with symmetric overlap 0.2"""
    return build_decomposition(grid21, 3, 1, 0.2, SplitMode.SYMMETRIC)


@pytest.fixture
def box_decomposition(grid21):
    """3 x 3 boxes, overlap split as in the reference rectangles"""
    return build_decomposition(grid21, 3, 3, 0.2, SplitMode.PAPER_COMPAT)


def random_field(grid, rng, scale=1.0):
    return GridFunction.from_interior(grid, scale * rng.standard_normal(grid.num_interior))


@pytest.fixture
def random_u(rng):
    return lambda grid, scale=1.0: random_field(grid, rng, scale)


def heat_problem(grid, u0=None, source=None, p=2.0, alpha=1.0, T=1.0):
    return ProblemSpec(
        p=p,
        alpha=lambda t: alpha,
        T=T,
        u0=u0 if u0 is not None else GridFunction.zeros(grid),
        source=source,
    )


@pytest.fixture
def small_config():
    """Fast linear experiment on 11 nodes"""
    return ExperimentConfig(
        name="small",
        nodes=11,
        Mx=3,
        My=1,
        overlap=0.2,
        strategy={"kind": "uniform_single"},
        step_sizes=[0.125, 0.0625, 0.03125],
        reps=3,
        seed=7,
    )
