"""Sparse undirected graphs, self-loop augmentation and degree normalization."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected graph stored as a symmetric CSR matrix.

    ``self_looped`` records whether :func:`add_self_loops` produced this
    graph; raw graphs never carry self-loops.
    """

    adjacency: sp.csr_matrix
    self_looped: bool = False

    def __post_init__(self):
        a = self.adjacency
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        a.sort_indices()
        a.data.flags.writeable = False

    @classmethod
    def from_edges(cls, num_nodes: int, edges, weights=None) -> "Graph":
        """Build a graph from an undirected edge list.

        Each undirected edge may be listed in either or both directions.
        Repeated pairs have their weights accumulated (with a warning).
        Self-loops in raw input are rejected.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(edges))
        weights = np.asarray(weights, dtype=np.float64)
        if len(weights) != len(edges):
            raise ValueError("weights and edges differ in length")
        if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
            raise ValueError(f"edge index out of range [0, {num_nodes})")
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            node = int(edges[loops][0, 0])
            raise ValueError(f"raw self-loop on node {node}; self-loops are added by the pipeline")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        upper = sp.coo_matrix((weights, (lo, hi)), shape=(num_nodes, num_nodes)).tocsr()
        n_unique = upper.nnz
        if n_unique < len(edges):
            warnings.warn(
                f"merged {len(edges) - n_unique} duplicate edge(s) by weight accumulation",
                stacklevel=2,
            )
        sym = (upper + upper.T).tocsr()
        return cls(sym)

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def num_edges(self) -> int:
        """Undirected edge count, excluding self-loops."""
        a = self.adjacency
        return int((a.nnz - np.count_nonzero(a.diagonal())) // 2)

    @property
    def degrees(self) -> np.ndarray:
        return np.asarray(self.adjacency.sum(axis=1)).ravel()

    def edge_list(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(edges, weights)`` with each undirected edge once, ``u < v``."""
        upper = sp.triu(self.adjacency, k=1).tocoo()
        order = np.lexsort((upper.col, upper.row))
        edges = np.stack([upper.row[order], upper.col[order]], axis=1).astype(np.int64)
        return edges, upper.data[order].astype(np.float64)

    def is_connected(self) -> bool:
        n_comp, _ = connected_components(self.adjacency, directed=False)
        return n_comp == 1

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        if self.adjacency.shape != other.adjacency.shape or self.self_looped != other.self_looped:
            return False
        return (self.adjacency != other.adjacency).nnz == 0

    __hash__ = object.__hash__


def add_self_loops(graph: Graph) -> Graph:
    """Return the graph with adjacency ``A + I``.

    Raises if the graph already went through this function, since a second
    application would silently produce weight-2 loops.
    """
    if graph.self_looped:
        raise ValueError("graph already has self-loops; refusing to add them twice")
    n = graph.num_nodes
    a = (graph.adjacency + sp.identity(n, format="csr")).tocsr()
    return Graph(a, self_looped=True)


@dataclass(frozen=True, eq=False)
class NormalizedAdjacency:
    """Sparse propagation operator ``D^(r-1) A D^(-r)`` over a self-looped graph."""

    matrix: sp.csr_matrix
    exponent_r: float
    source: Graph | None = None
    _transposed: sp.csr_matrix = field(default=None, repr=False)
    _cast: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self._transposed is None:
            object.__setattr__(self, "_transposed", self.matrix.T.tocsr())

    def operators(self, dtype) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        """``(matrix, transpose)`` cast to ``dtype``, cached per dtype."""
        dtype = np.dtype(dtype)
        if dtype == self.matrix.dtype:
            return self.matrix, self._transposed
        if dtype not in self._cast:
            self._cast[dtype] = (self.matrix.astype(dtype), self._transposed.astype(dtype))
        return self._cast[dtype]

    @classmethod
    def identity(cls, n: int) -> "NormalizedAdjacency":
        return cls(sp.identity(n, format="csr"), exponent_r=0.5)

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def T(self) -> sp.csr_matrix:
        return self._transposed

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def propagate(self, x: np.ndarray, k: int = 1) -> np.ndarray:
        """Apply the operator ``k`` times to a dense array (no gradient tracking)."""
        for _ in range(k):
            x = self.matrix @ x
        return x


def normalize_adjacency(graph: Graph, r: float = 0.5) -> NormalizedAdjacency:
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"exponent r must lie in [0, 1], got {r}")
    if not graph.self_looped:
        raise ValueError("normalize_adjacency needs a self-looped graph; call add_self_loops first")
    a = graph.adjacency.tocoo()
    deg = graph.degrees
    left = deg ** (r - 1.0)
    right = deg ** (-r)
    # left[i] * right[j] is commutative for r=0.5, which makes the result exactly symmetric
    data = a.data * (left[a.row] * right[a.col])
    m = sp.csr_matrix((data, (a.row, a.col)), shape=a.shape)
    m.sort_indices()
    return NormalizedAdjacency(m, exponent_r=float(r), source=graph)


def gcn_adjacency(graph: Graph, r: float = 0.5) -> NormalizedAdjacency:
    """Self-loop (if needed) and normalize in one step."""
    if not graph.self_looped:
        graph = add_self_loops(graph)
    return normalize_adjacency(graph, r)


def _original_degrees(graph: Graph) -> np.ndarray:
    deg = graph.degrees
    if graph.self_looped:
        deg = deg - graph.adjacency.diagonal()
    return deg


def stationary_limit(graph: Graph, r: float = 0.5) -> np.ndarray:
    """Closed-form limit of ``A_hat ** k`` as ``k`` grows, for a connected graph.

    Entry ``(i, j)`` is ``(d_i+1)^r (d_j+1)^(1-r) / (2m+n)`` with ``d`` the
    degrees before self-loops. Accepts the raw or the self-looped graph.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"exponent r must lie in [0, 1], got {r}")
    if not graph.is_connected():
        raise ValueError("stationary_limit requires a connected graph")
    looped = _original_degrees(graph) + 1.0
    return np.outer(looped**r, looped ** (1.0 - r)) / looped.sum()
