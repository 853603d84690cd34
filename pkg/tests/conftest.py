import numpy as np
import pytest

from airgnn.data import make_split, synth_sbm
from airgnn.graph import Graph


def triangle():
    return Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])


def k2():
    return Graph.from_edges(2, [(0, 1)])


def star3():
    return Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)])


def small_sbm(seed=0, n=10, classes=2):
    ds = synth_sbm(n, classes, 0.6, 0.2, 4, 1.0, seed=seed)
    return make_split(ds, 2, 2, n - 2 * classes - 2, seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sbm10():
    return small_sbm()
