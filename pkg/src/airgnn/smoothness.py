"""Node- and graph-level smoothing levels (mean pairwise cosine similarity)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Graph, gcn_adjacency, stationary_limit


def _as_array(features):
    data = getattr(features, "data", features)
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError("smoothness needs at least two nodes")
    return x


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def node_smoothness_all(features) -> np.ndarray:
    """NSL for every node; rows with zero norm have cosine 0 with everything."""
    x = _as_array(features)
    u = _unit_rows(x)
    self_sim = np.einsum("ij,ij->i", u, u)
    pair_sums = u @ u.sum(axis=0) - self_sim
    return np.clip(pair_sums / (x.shape[0] - 1), -1.0, 1.0)


def node_smoothness(features, i: int) -> float:
    x = _as_array(features)
    u = _unit_rows(x)
    sims = u @ u[i]
    return float(np.clip((sims.sum() - sims[i]) / (x.shape[0] - 1), -1.0, 1.0))


def graph_smoothness(features) -> float:
    return float(np.mean(node_smoothness_all(features)))


@dataclass
class SmoothnessReport:
    gsl: np.ndarray
    stationary_gsl: float | None = None
    nsl: list | None = None

    def rows(self):
        for k, v in enumerate(self.gsl):
            yield {"k": str(k), "gsl": float(v)}
        if self.stationary_gsl is not None:
            yield {"k": "inf", "gsl": self.stationary_gsl}


def gsl_trajectory(graph: Graph, features, k_max: int, r: float = 0.5, keep_nsl: bool = False) -> SmoothnessReport:
    """GSL of ``A_hat ** k @ X`` for ``k = 0..k_max`` plus the stationary GSL.

    The stationary entry is only computed for connected graphs.
    """
    if k_max < 0:
        raise ValueError(f"k_max must be >= 0, got {k_max}")
    x = _as_array(features)
    adj = gcn_adjacency(graph, r)
    values, nsl = [], [] if keep_nsl else None
    h = x
    for k in range(k_max + 1):
        if k:
            h = adj.propagate(h)
        values.append(graph_smoothness(h))
        if keep_nsl:
            nsl.append(node_smoothness_all(h))
    stationary = None
    if graph.is_connected():
        stationary = graph_smoothness(stationary_limit(graph, r) @ x)
    return SmoothnessReport(np.array(values), stationary, nsl)
