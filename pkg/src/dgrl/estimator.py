"""scikit-learn style facades: graph-level regressor/classifier wrapping
the model+training stack, and a transformer exposing the spectral node
embeddings.  Inputs are sequences of DirectedGraph, not feature matrices;
everything else (get_params/set_params, clone, fitted attributes with a
trailing underscore) follows the sklearn estimator contract.
"""

import numpy as np
from sklearn.base import (BaseEstimator, ClassifierMixin, RegressorMixin,
                          TransformerMixin)
from sklearn.exceptions import NotFittedError

from .errors import InvalidSpec, ShapeMismatch
from .graphs import Dataset, DirectedGraph, TaskSpec, build_graph
from .layers import DirectionMode
from .model import ModelConfig, build_model, validate_combo
from .pe import PE_NODE_CAP, PEConfig, compute_pe_basis, npe
from .train import TrainConfig
from .train import train as _train

VAL_FRACTION = 0.15


def check_graphs(X):
    """Validate a graph sequence; returns (graphs, feature_dim, edge_dim)."""
    graphs = list(X)
    if not graphs:
        raise InvalidSpec("no graphs given")
    for g in graphs:
        if not isinstance(g, DirectedGraph):
            raise InvalidSpec(f"expected DirectedGraph, got {type(g).__name__}")
    feat_dims = {g.node_features.shape[1] for g in graphs}
    if len(feat_dims) > 1:
        raise ShapeMismatch(f"mixed node feature widths {sorted(feat_dims)}")
    edge_dims = {g.edge_features.shape[1] for g in graphs
                 if g.edge_features is not None}
    if len(edge_dims) > 1:
        raise ShapeMismatch(f"mixed edge feature widths {sorted(edge_dims)}")
    edge_dim = edge_dims.pop() if edge_dims else 0
    if edge_dim and any(g.num_edges and g.edge_features is None
                        for g in graphs):
        raise ShapeMismatch("some graphs have edge features, some do not")
    return graphs, feat_dims.pop(), edge_dim


class _GraphPredictor(BaseEstimator):
    """Shared fit machinery; subclasses define the task and output mapping."""

    def __init__(self, backbone="gin", direction="plane", combine=None,
                 hidden_dim=64, num_layers=3, mlp_layers=2, dropout=0.0,
                 heads=4, pe_mode="none", q=0.0, pe_d=8, pe_m=4, pe_c=8,
                 batch_size=64, lr=1e-3, epochs_max=200, patience=20,
                 val_fraction=VAL_FRACTION, seed=0):
        self.backbone = backbone
        self.direction = direction
        self.combine = combine
        self.hidden_dim = hidden_dim
        self.num_layers = num_layers
        self.mlp_layers = mlp_layers
        self.dropout = dropout
        self.heads = heads
        self.pe_mode = pe_mode
        self.q = q
        self.pe_d = pe_d
        self.pe_m = pe_m
        self.pe_c = pe_c
        self.batch_size = batch_size
        self.lr = lr
        self.epochs_max = epochs_max
        self.patience = patience
        self.val_fraction = val_fraction
        self.seed = seed

    def _model_config(self):
        return ModelConfig(
            backbone=self.backbone,
            direction=DirectionMode(self.direction, self.combine),
            hidden_dim=self.hidden_dim, num_layers=self.num_layers,
            mlp_layers=self.mlp_layers, dropout=self.dropout,
            heads=self.heads,
            pe=PEConfig(mode=self.pe_mode, q=self.q, d=self.pe_d,
                        m=self.pe_m, c=self.pe_c))

    def _fit_graphs(self, graphs, targets, task, edge_dim, feature_dim):
        n = len(graphs)
        if n < 2:
            raise InvalidSpec("need at least 2 graphs (train + validation)")
        with_targets = [
            build_graph(g.num_nodes, g.edges, g.node_features,
                        edge_features=g.edge_features, graph_target=t)
            for g, t in zip(graphs, targets)]
        rng = np.random.default_rng(self.seed)
        if not 0.0 < self.val_fraction < 1.0:
            raise InvalidSpec(
                f"val_fraction {self.val_fraction} outside (0, 1)")
        n_val = min(n - 1, max(1, round(self.val_fraction * n)))
        order = rng.permutation(n)
        tags = np.array(["train"] * n, dtype=object)
        tags[order[:n_val]] = "val"
        dataset = Dataset(tuple(with_targets), task, split=tuple(tags))

        cfg = self._model_config()
        validate_combo(cfg, edge_dim)
        model = build_model(cfg, feature_dim, edge_dim, task, seed=self.seed)
        train_cfg = TrainConfig(batch_size=self.batch_size, lr=self.lr,
                                epochs_max=self.epochs_max,
                                patience=self.patience, seed=self.seed)
        model, history = _train(model, dataset, train_cfg)
        self.model_ = model
        self.task_ = task
        self.history_ = history
        self.n_features_in_ = feature_dim
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                f"{type(self).__name__} must be fitted before predicting")

    def _raw_outputs(self, X):
        self._check_fitted()
        graphs, feat, _edge = check_graphs(X)
        if feat != self.n_features_in_:
            raise ShapeMismatch(
                f"fitted on {self.n_features_in_} node features, got {feat}")
        return np.vstack([self.model_.forward(g).values for g in graphs])


class DirectedGraphRegressor(RegressorMixin, _GraphPredictor):
    """Graph-level regression over directed graphs."""

    def fit(self, X, y):
        graphs, feat, edge = check_graphs(X)
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y.reshape(-1, 1)
        if y.ndim != 2 or y.shape[0] != len(graphs):
            raise ShapeMismatch(
                f"y has shape {y.shape} for {len(graphs)} graphs")
        self._y_was_1d = y.shape[1] == 1
        task = TaskSpec("graph", "regression", ("mse", "rmse"),
                        dim=y.shape[1])
        return self._fit_graphs(graphs, list(y), task, edge, feat)

    def predict(self, X):
        out = self._raw_outputs(X)
        return out[:, 0] if self._y_was_1d else out


class DirectedGraphClassifier(ClassifierMixin, _GraphPredictor):
    """Graph-level classification; predict_proba gives softmax rows."""

    def fit(self, X, y):
        graphs, feat, edge = check_graphs(X)
        y = np.asarray(y)
        if y.ndim != 1 or y.shape[0] != len(graphs):
            raise ShapeMismatch(
                f"y has shape {y.shape} for {len(graphs)} graphs")
        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise InvalidSpec("classification needs at least 2 classes")
        index = {c: i for i, c in enumerate(self.classes_)}
        targets = [int(index[c]) for c in y]
        task = TaskSpec("graph", "classification", ("accuracy",),
                        num_classes=len(self.classes_))
        return self._fit_graphs(graphs, targets, task, edge, feat)

    def predict_proba(self, X):
        logits = self._raw_outputs(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self._raw_outputs(X), axis=1)]


class MagneticLaplacianEmbedding(TransformerMixin, BaseEstimator):
    """Per-graph spectral node embeddings: eigenvector real and imaginary
    parts side by side, [n, 2d] per graph.  Graph sizes vary, so transform
    returns a list of arrays rather than one matrix."""

    def __init__(self, q=0.0, d=8, node_cap=PE_NODE_CAP):
        self.q = q
        self.d = d
        self.node_cap = node_cap

    def fit(self, X, y=None):
        check_graphs(X)
        self.n_features_in_ = 0      # stateless; kept for sklearn tooling
        return self

    def transform(self, X):
        graphs, _feat, _edge = check_graphs(X)
        out = []
        for g in graphs:
            dec = compute_pe_basis(g, self.q, self.d, node_cap=self.node_cap)
            out.append(npe(dec))
        return out
