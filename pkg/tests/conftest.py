import os

import numpy as np
import pytest

from fedstruct.graphcore import GlobalGraph, canonical_edges, load_graph

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
DATA = os.path.join(ROOT, "data")


def random_graph(rng, n, p=0.2, d=4, c=3, name="rand"):
    iu = np.triu_indices(n, 1)
    keep = rng.random(iu[0].size) < p
    edges = canonical_edges(np.stack([iu[0][keep], iu[1][keep]], axis=1), n)
    x = rng.normal(size=(n, d))
    y = rng.integers(0, c, size=n)
    return GlobalGraph(name, x, y, edges, c)


def path_graph(n, d=2, c=2):
    edges = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return GlobalGraph("path", np.ones((n, d)), np.arange(n) % c, edges, c)


def dataset_path(name):
    return os.path.join(DATA, name)


def have_dataset(name):
    return os.path.exists(os.path.join(dataset_path(name), "meta.json"))


@pytest.fixture(scope="session")
def cora():
    if not have_dataset("cora"):
        pytest.skip("cora not built")
    return load_graph(dataset_path("cora"))
