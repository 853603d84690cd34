"""Decoupled graph neural networks with adaptive initial residuals, on a small numpy autodiff."""

from .data import Dataset, load_canonical, load_citation_plaintext, load_dataset, make_split, save_canonical, synth_sbm
from .estimator import GNNClassifier, PropagationTransformer
from .graph import Graph, NormalizedAdjacency, add_self_loops, gcn_adjacency, normalize_adjacency, stationary_limit
from .models import GNN, ModelConfig, TrainReport, build_model, train
from .smoothness import SmoothnessReport, graph_smoothness, gsl_trajectory, node_smoothness

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GNN",
    "GNNClassifier",
    "Graph",
    "ModelConfig",
    "NormalizedAdjacency",
    "PropagationTransformer",
    "SmoothnessReport",
    "TrainReport",
    "add_self_loops",
    "build_model",
    "gcn_adjacency",
    "graph_smoothness",
    "gsl_trajectory",
    "load_canonical",
    "load_citation_plaintext",
    "load_dataset",
    "make_split",
    "node_smoothness",
    "normalize_adjacency",
    "save_canonical",
    "stationary_limit",
    "synth_sbm",
    "train",
]
