"""Shared builders for the test suite.

Random instances are always built from an explicit seed so every test is
reproducible in isolation; oracles that recompute quantities with plain
loops live next to the tests that use them.
"""

import numpy as np
import pytest

from autoclust.aden import AdenConfig, TrainConfig
from autoclust.autonomy import TabularAutonomy
from autoclust.core import ClusterSet, Dataset
from autoclust.scenarios import BenchmarkConfigs


def make_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(seed)


def random_dataset(n: int, d: int, seed: int, weighted: bool = False) -> Dataset:
    rng = make_rng(seed)
    pts = rng.uniform(-1.0, 1.0, size=(n, d))
    if weighted:
        w = rng.uniform(0.5, 2.0, size=n)
        return Dataset.from_points(pts, weights=w)
    return Dataset.from_points(pts)


def random_clusters(k: int, d: int, seed: int) -> ClusterSet:
    rng = make_rng(seed)
    return ClusterSet.from_array(rng.uniform(-1.0, 1.0, size=(k, d)))


def random_tabular(k: int, n: int, seed: int) -> TabularAutonomy:
    """Random kernel: each column p(.|j,i) an independent Dirichlet draw."""
    rng = make_rng(seed)
    t = rng.gamma(1.0, 1.0, size=(k, k, n))
    t /= t.sum(axis=0, keepdims=True)
    return TabularAutonomy(t)


@pytest.fixture
def two_point_dataset() -> Dataset:
    return Dataset.from_points(np.array([[-1.0], [1.0]]))
