import os
import sys

import numpy as np
import pytest

# Add the project root to sys.path so tests can import config and graphtokens
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from graphtokens.graph import AttributedGraph, Edge  # noqa: E402
from graphtokens.numerics import DeterministicRng  # noqa: E402


@pytest.fixture
def path_graph():
    """a - b - c with 2-d features."""
    features = np.array([[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]])
    edges = (Edge(0, 1, "next", (1.0,)), Edge(1, 2, "next", (1.0,)))
    return AttributedGraph(features, edges, ("a", "b", "c"))


@pytest.fixture
def two_triangles():
    a = np.zeros((6, 6))
    for block in ((0, 1, 2), (3, 4, 5)):
        for i in block:
            for j in block:
                if i != j:
                    a[i, j] = 1.0
    return a


@pytest.fixture
def random_graph():
    def make(n, seed, d=4, edge_prob=0.4, edge_dim=2):
        rng = DeterministicRng(seed)
        edges = []
        for i in range(n):
            for j in range(i + 1, n):
                if rng.next_float() < edge_prob:
                    edges.append(Edge(i, j, "r", tuple(rng.normal((edge_dim,)))))
        labels = tuple(f"n{i}" for i in range(n))
        return AttributedGraph(rng.normal((n, d)), tuple(edges), labels)

    return make
