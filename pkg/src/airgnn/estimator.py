"""scikit-learn style wrappers around the graph models.

Graph learning is transductive, so ``X`` is a whole :class:`~airgnn.data.Dataset`
(graph, features, labels and split masks) rather than a feature matrix.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .data import Dataset
from .graph import Graph, gcn_adjacency
from .models import ModelConfig, predict_logits, train


def check_dataset(X) -> Dataset:
    if not isinstance(X, Dataset):
        raise TypeError(f"expected an airgnn Dataset, got {type(X).__name__}")
    check_array(X.features, ensure_min_samples=2, dtype=None)
    return X


def _check_mask(X: Dataset, mask):
    if mask is None:
        return np.ones(X.num_nodes, dtype=bool)
    if isinstance(mask, str):
        return X.mask(mask)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (X.num_nodes,):
        raise ValueError(f"mask must have shape ({X.num_nodes},), got {mask.shape}")
    return mask


class GNNClassifier(ClassifierMixin, BaseEstimator):
    """Node classifier over any architecture in the P/T family.

    ``fit`` trains on ``X.train_mask`` with best-validation model selection;
    ``predict`` labels every node, or those selected by ``mask``.
    """

    def __init__(
        self,
        architecture="ptpt",
        d_p=2,
        d_t=2,
        air=False,
        skip="none",
        hidden=64,
        dropout=0.5,
        lr=0.01,
        weight_decay=5e-4,
        epochs=500,
        seed=0,
        r=0.5,
        dtype="float32",
    ):
        self.architecture = architecture
        self.d_p = d_p
        self.d_t = d_t
        self.air = air
        self.skip = skip
        self.hidden = hidden
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.seed = seed
        self.r = r
        self.dtype = dtype

    def _config(self, num_classes) -> ModelConfig:
        return ModelConfig(num_classes=num_classes, **self.get_params()).validate()

    def fit(self, X, y=None):
        X = check_dataset(X)
        if y is not None:
            X = X.with_(labels=np.asarray(y))
        self.report_ = train(self._config(X.class_count), X)
        self.model_ = self.report_.model
        self.classes_ = np.arange(X.class_count)
        self.n_features_in_ = X.num_features
        return self

    def decision_function(self, X, mask=None):
        check_is_fitted(self, "model_")
        X = check_dataset(X)
        if X.num_features != self.n_features_in_:
            raise ValueError(f"X has {X.num_features} features, the model was fit on {self.n_features_in_}")
        return predict_logits(self.model_, X)[_check_mask(X, mask)].astype(np.float64)

    def predict_proba(self, X, mask=None):
        z = self.decision_function(X, mask)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X, mask=None):
        check_is_fitted(self, "model_")
        return self.classes_[np.argmax(self.decision_function(X, mask), axis=1)]

    def score(self, X, y=None, mask="test", sample_weight=None):
        """Accuracy on the nodes selected by ``mask`` (default: the test split)."""
        X = check_dataset(X)
        sel = _check_mask(X, mask)
        labels = X.labels[sel] if y is None else np.asarray(y)
        return float(np.average(self.predict(X, sel) == labels, weights=sample_weight))


class PropagationTransformer(TransformerMixin, BaseEstimator):
    """Fixed feature propagation ``A_hat ** k @ X`` over a given graph."""

    def __init__(self, graph: Graph | None = None, k=2, r=0.5):
        self.graph = graph
        self.k = k
        self.r = r

    def fit(self, X, y=None):
        if self.graph is None:
            raise ValueError("PropagationTransformer needs a graph")
        if self.k < 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        X = check_array(X)
        if X.shape[0] != self.graph.num_nodes:
            raise ValueError(f"X has {X.shape[0]} rows but the graph has {self.graph.num_nodes} nodes")
        self.adjacency_ = gcn_adjacency(self.graph, self.r)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "adjacency_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return np.asarray(self.adjacency_.propagate(X, self.k))
