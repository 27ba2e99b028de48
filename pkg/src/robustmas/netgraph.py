"""Communication graphs, pinned Laplacians and pinned stochastic matrices.

Node indices are 1-based at the public surface (graph files, pin maps),
0-based inside arrays.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .matrixcore import as_matrix, eig_symmetric, spectral_radius

__all__ = [
    "Graph",
    "PinSet",
    "Network",
    "laplacian",
    "pinned_laplacian",
    "stochastic_weights",
    "validate_stochastic",
    "pinned_stochastic",
    "check_assumption1",
    "is_connected",
]

STOCHASTIC_ATOL = 1e-12
DEFAULT_CT_PIN = 1.0
DEFAULT_DT_PIN_FRACTION = 0.5


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``1..n``."""

    n: int
    edges: frozenset[tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"node count must be a positive integer, got {self.n!r}")
        normalized = set()
        for edge in self.edges:
            i, j = (int(v) for v in edge)
            if i == j:
                raise ValueError(f"self-loop on node {i} is not allowed")
            if not (1 <= i <= self.n and 1 <= j <= self.n):
                raise ValueError(f"edge ({i}, {j}) has an index outside [1, {self.n}]")
            normalized.add((min(i, j), max(i, j)))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "edges", frozenset(normalized))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Iterable[int]]) -> "Graph":
        return cls(n, frozenset(tuple(e) for e in edges))

    def adjacency(self) -> np.ndarray:
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            adj[i - 1, j - 1] = adj[j - 1, i - 1] = 1.0
        return adj

    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True)
class PinSet:
    """Per-node pinning weights (``d_i`` or ``d̂_i``); zero means unpinned."""

    weights: tuple[float, ...]

    def __post_init__(self):
        w = tuple(float(v) for v in self.weights)
        if any(not np.isfinite(v) or v < 0 for v in w):
            raise ValueError(f"pin weights must be finite and nonnegative, got {w}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def zeros(cls, n: int) -> "PinSet":
        return cls((0.0,) * n)

    @classmethod
    def from_mapping(cls, n: int, pins: Mapping, default: float | Iterable[float] = DEFAULT_CT_PIN) -> "PinSet":
        """Build from ``{node: weight}`` with 1-based node keys.

        A weight of ``None`` marks the node pinned with the default weight;
        ``default`` may be a scalar or a per-node sequence.
        """
        defaults = np.broadcast_to(np.asarray(default, dtype=float), (n,))
        weights = [0.0] * n
        for key, value in pins.items():
            idx = int(key)
            if not 1 <= idx <= n:
                raise ValueError(f"pin index {idx} outside [1, {n}]")
            weights[idx - 1] = float(defaults[idx - 1]) if value is None else float(value)
        return cls(tuple(weights))

    @property
    def n(self) -> int:
        return len(self.weights)

    def as_array(self) -> np.ndarray:
        return np.array(self.weights)

    def as_mapping(self) -> dict[str, float]:
        return {str(i + 1): w for i, w in enumerate(self.weights) if w > 0}

    def any_positive(self) -> bool:
        return any(w > 0 for w in self.weights)


def _check_sizes(g: Graph, pins: PinSet) -> None:
    if pins.n != g.n:
        raise ValueError(f"pin set has {pins.n} entries but graph has {g.n} nodes")


def laplacian(g: Graph) -> np.ndarray:
    adj = g.adjacency()
    return np.diag(adj.sum(axis=1)) - adj


def pinned_laplacian(g: Graph, pins: PinSet) -> np.ndarray:
    """``L + diag(pins)``; positive definite under Assumption 1."""
    _check_sizes(g, pins)
    return laplacian(g) + np.diag(pins.as_array())


def stochastic_weights(g: Graph) -> np.ndarray:
    """Metropolis-Hastings weights: ``1 / (1 + max(deg_i, deg_j))`` on edges."""
    deg = g.degrees()
    mat = np.zeros((g.n, g.n))
    for i, j in g.edges:
        w = 1.0 / (1.0 + max(deg[i - 1], deg[j - 1]))
        mat[i - 1, j - 1] = mat[j - 1, i - 1] = w
    np.fill_diagonal(mat, 1.0 - mat.sum(axis=1))
    return mat


def validate_stochastic(dmat, g: Graph | None = None) -> np.ndarray:
    """Check the double-stochastic invariants and return the matrix.

    When ``g`` is given, the off-diagonal positivity pattern must coincide
    with its edge set.
    """
    dmat = as_matrix(dmat, "stochastic matrix")
    n = dmat.shape[0]
    if dmat.shape != (n, n):
        raise ValueError(f"stochastic matrix must be square, got {dmat.shape}")
    if np.max(np.abs(dmat - dmat.T)) > STOCHASTIC_ATOL:
        raise ValueError("stochastic matrix must be symmetric")
    if np.any(dmat < -STOCHASTIC_ATOL):
        raise ValueError("stochastic matrix must be entrywise nonnegative")
    rows = dmat.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > STOCHASTIC_ATOL * max(n, 10):
        raise ValueError(f"rows must sum to 1, got {np.round(rows, 12).tolist()}")
    if np.any(np.diag(dmat) <= 0):
        raise ValueError("stochastic matrix must have a strictly positive diagonal")
    if g is not None:
        if g.n != n:
            raise ValueError(f"stochastic matrix is {n}x{n} but graph has {g.n} nodes")
        pattern = (dmat > 0) & ~np.eye(n, dtype=bool)
        if not np.array_equal(pattern, g.adjacency() > 0):
            raise ValueError("stochastic matrix positivity pattern does not match the graph edges")
    return dmat


def pinned_stochastic(dmat, pins: PinSet) -> np.ndarray:
    """``D - diag(pins)``; every positive pin must stay below its diagonal entry."""
    dmat = as_matrix(dmat, "stochastic matrix")
    if pins.n != dmat.shape[0]:
        raise ValueError(f"pin set has {pins.n} entries but matrix is {dmat.shape[0]}x{dmat.shape[0]}")
    diag = np.diag(dmat)
    for i, w in enumerate(pins.weights):
        if w > 0 and not w < diag[i]:
            raise ValueError(
                f"pin weight {w} at node {i + 1} must be strictly below the diagonal entry {diag[i]}"
            )
    return dmat - np.diag(pins.as_array())


def is_connected(g: Graph) -> bool:
    neighbors: dict[int, list[int]] = {i: [] for i in range(1, g.n + 1)}
    for i, j in g.edges:
        neighbors[i].append(j)
        neighbors[j].append(i)
    seen = {1}
    queue = deque([1])
    while queue:
        node = queue.popleft()
        for nxt in neighbors[node]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return len(seen) == g.n


def check_assumption1(g: Graph, pins: PinSet) -> bool:
    """Connected graph and at least one node with a positive pin weight."""
    if pins.n != g.n:
        return False
    return is_connected(g) and pins.any_positive()


@dataclass(frozen=True)
class Network:
    """A graph with pin weights and, optionally, an explicit stochastic matrix.

    The stochastic matrix is only used in discrete mode; when absent the
    Metropolis-Hastings weights of the graph are used.
    """

    graph: Graph
    pins: PinSet
    stochastic: np.ndarray | None = None

    def __post_init__(self):
        _check_sizes(self.graph, self.pins)
        if self.stochastic is not None:
            mat = validate_stochastic(self.stochastic, self.graph)
            mat.setflags(write=False)
            object.__setattr__(self, "stochastic", mat)

    @property
    def n(self) -> int:
        return self.graph.n

    def satisfies_assumption1(self) -> bool:
        return check_assumption1(self.graph, self.pins)

    def stochastic_matrix(self) -> np.ndarray:
        return self.stochastic if self.stochastic is not None else stochastic_weights(self.graph)

    def pinned_laplacian(self) -> np.ndarray:
        return pinned_laplacian(self.graph, self.pins)

    def pinned_stochastic(self) -> np.ndarray:
        return pinned_stochastic(self.stochastic_matrix(), self.pins)

    def laplacian_eigenvalues(self) -> np.ndarray:
        return eig_symmetric(self.pinned_laplacian())[0]

    def stochastic_eigenvalues(self) -> np.ndarray:
        return eig_symmetric(self.pinned_stochastic())[0]

    def lambda_min(self) -> float:
        return float(self.laplacian_eigenvalues()[0])

    def kappa(self) -> float:
        """Spectral radius of the pinned stochastic matrix."""
        return spectral_radius(self.pinned_stochastic())

    def with_graph(self, graph: Graph, pins: PinSet | None = None) -> "Network":
        return Network(graph, pins if pins is not None else self.pins)

    def to_fragment(self) -> dict:
        frag = {
            "n": self.graph.n,
            "edges": [list(e) for e in self.graph.sorted_edges()],
            "pins": self.pins.as_mapping(),
        }
        if self.stochastic is not None:
            frag["stochastic"] = self.stochastic.tolist()
        return frag


def default_discrete_pins(dmat: np.ndarray, pinned_nodes: Iterable[int]) -> PinSet:
    """Pins at half the diagonal entry for each listed 1-based node."""
    diag = np.diag(dmat)
    return PinSet.from_mapping(
        dmat.shape[0], {i: None for i in pinned_nodes}, default=DEFAULT_DT_PIN_FRACTION * diag
    )
