from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from robustmas.netgraph import Graph, Network, PinSet  # noqa: E402
from robustmas.synthesis import AgentModel, Controller  # noqa: E402

# Edge set read off the positivity pattern of the printed pinned stochastic matrix.
EXAMPLE_EDGES = [(1, 2), (1, 3), (1, 4), (1, 5), (2, 3), (3, 6), (4, 5), (5, 6)]

EX2_STOCHASTIC = np.array([
    [0.4, 0.15, 0.15, 0.15, 0.15, 0.0],
    [0.15, 0.5, 0.35, 0.0, 0.0, 0.0],
    [0.15, 0.35, 0.3, 0.0, 0.0, 0.2],
    [0.15, 0.0, 0.0, 0.7, 0.15, 0.0],
    [0.15, 0.0, 0.0, 0.15, 0.5, 0.2],
    [0.0, 0.0, 0.2, 0.0, 0.2, 0.6],
])
EX2_PINNED = np.array([
    [0.1, 0.15, 0.15, 0.15, 0.15, 0.0],
    [0.15, 0.5, 0.35, 0.0, 0.0, 0.0],
    [0.15, 0.35, 0.3, 0.0, 0.0, 0.2],
    [0.15, 0.0, 0.0, 0.1, 0.15, 0.0],
    [0.15, 0.0, 0.0, 0.15, 0.5, 0.2],
    [0.0, 0.0, 0.2, 0.0, 0.2, 0.1],
])
EX2_EIGS = [-0.1611, -0.0644, 0.0959, 0.2257, 0.6316, 0.8722]

EX1_P = np.array([[1.6448, -2.3499], [-2.3499, 9.7007]])
EX1_TAU = 64.0444
EX1_K = np.array([[-0.1126, -0.0788]])
EX2_K = np.array([[-0.0195, -0.9888, 0.0009]])
EX2_Q = np.array([[98.2213, -2.0, -61.3883], [-2.0, 0.1197, 1.3573], [-61.3883, 1.3573, 86.2810]])
EX2_W = np.array([[0.0, -0.0780, -0.0612]])
EX2_TAU = 0.0912


def example1_model(delta=10.0, **kw):
    return AgentModel([[0, 1], [-2.8, 0]], [[0], [1]], [[0], [-0.4]], [[1, 0]], delta, **kw)


def example2_model(delta=2.5, **kw):
    return AgentModel([[1, 2, 0], [0, 1, 0], [-1, 0, -0.6]], [[0], [1], [1]], [[0.8], [0], [0]],
                      [[0, 1, 0]], delta, mode="discrete", **kw)


def example1_network():
    return Network(Graph.from_edges(6, EXAMPLE_EDGES), PinSet.from_mapping(6, {1: 2.0}))


def example2_network():
    return Network(Graph.from_edges(6, EXAMPLE_EDGES), PinSet.from_mapping(6, {1: 0.3, 4: 0.6, 6: 0.5}),
                   EX2_STOCHASTIC)


@pytest.fixture
def ex1():
    return example1_model(), example1_network()


@pytest.fixture
def ex2():
    return example2_model(), example2_network()


@pytest.fixture
def published_ct_controller():
    return Controller(EX1_K, "continuous", example1_network().pins, 275.0)


@pytest.fixture
def published_dt_controller():
    return Controller(EX2_K, "discrete", example2_network().pins)
