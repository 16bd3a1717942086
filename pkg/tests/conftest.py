import numpy as np
import pytest

import subcon


@pytest.fixture(scope="session")
def toy_graph():
    """Three-community SBM small enough for exhaustive checks."""
    spec = subcon.SyntheticSpec(blocks=(30, 30, 30), p_in=0.3, p_out=0.02,
                                feature_dim=4, seed=7)
    return subcon.generate_sbm(spec)


@pytest.fixture(scope="session")
def toy_split():
    return subcon.ClassSplit(frozenset({0, 1}), frozenset({2}))


def path_graph(n, d=2):
    edges = np.array([[i, i + 1] for i in range(n - 1)])
    return subcon.from_edges(n, edges, np.zeros((n, d)), np.zeros(n),
                             num_classes=1)


def complete_graph(n, d=2):
    edges = np.array([[i, j] for i in range(n) for j in range(i + 1, n)])
    return subcon.from_edges(n, edges, np.zeros((n, d)), np.zeros(n),
                             num_classes=1)
