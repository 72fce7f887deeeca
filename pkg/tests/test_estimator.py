import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dgrl.errors import InvalidCombo, InvalidSpec, NodeCapExceeded, ShapeMismatch
from dgrl.estimator import (
    DirectedGraphClassifier,
    DirectedGraphRegressor,
    MagneticLaplacianEmbedding,
    check_graphs,
)
from dgrl.graphs import build_graph
from dgrl.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="module")
def corpus():
    spec = SyntheticSpec(num_graphs=14, node_range=(4, 6), density=0.4)
    ds = generate_synthetic(spec, seed=5)
    graphs = list(ds.graphs)
    y = np.array([float(g.graph_target[0]) for g in graphs])
    return graphs, y


def small_regressor(**over):
    kw = dict(hidden_dim=16, num_layers=2, epochs_max=120, patience=20,
              lr=3e-3, seed=0)
    kw.update(over)
    return DirectedGraphRegressor(**kw)


# ------------------------------------------------------------- sklearn API

def test_get_params_set_params_clone():
    est = small_regressor(direction="bidirected", combine="sum")
    params = est.get_params()
    assert params["direction"] == "bidirected"
    assert params["combine"] == "sum"
    assert params["hidden_dim"] == 16
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(hidden_dim=32)
    assert est.get_params()["hidden_dim"] == 32


def test_predict_before_fit_raises():
    with pytest.raises(NotFittedError):
        small_regressor().predict([])


# -------------------------------------------------------------- regression

def test_regressor_fit_predict(corpus):
    graphs, y = corpus
    est = small_regressor().fit(graphs, y)
    pred = est.predict(graphs)
    assert pred.shape == (len(graphs),)
    assert np.isfinite(pred).all()
    # enough capacity to track the labels on the data it saw
    assert np.mean((pred - y) ** 2) < np.var(y)
    assert np.isfinite(est.score(graphs, y))
    assert est.n_features_in_ == graphs[0].node_features.shape[1]


def test_regressor_multi_output_keeps_2d(corpus):
    graphs, y = corpus
    y2 = np.stack([y, 2.0 * y], axis=1)
    est = small_regressor(epochs_max=20).fit(graphs, y2)
    assert est.predict(graphs).shape == (len(graphs), 2)


def test_regressor_seed_determinism(corpus):
    graphs, y = corpus
    p1 = small_regressor(epochs_max=40).fit(graphs, y).predict(graphs)
    p2 = small_regressor(epochs_max=40).fit(graphs, y).predict(graphs)
    p3 = small_regressor(epochs_max=40, seed=1).fit(graphs, y).predict(graphs)
    assert np.array_equal(p1, p2)
    assert not np.array_equal(p1, p3)


def test_regressor_input_validation(corpus):
    graphs, y = corpus
    est = small_regressor(epochs_max=5)
    with pytest.raises(ShapeMismatch):
        est.fit(graphs, y[:-1])
    with pytest.raises(InvalidSpec):
        est.fit([], [])
    with pytest.raises(InvalidSpec):
        est.fit([1, 2], [0.0, 1.0])
    with pytest.raises(InvalidSpec):
        est.fit(graphs[:1], y[:1])
    with pytest.raises(InvalidSpec):
        small_regressor(val_fraction=1.5).fit(graphs, y)
    fitted = small_regressor(epochs_max=5).fit(graphs, y)
    width = graphs[0].node_features.shape[1]
    wider = build_graph(3, [(0, 1), (1, 2)], np.ones((3, width + 1)))
    with pytest.raises(ShapeMismatch):
        fitted.predict([wider])
    with pytest.raises(ShapeMismatch):
        check_graphs([graphs[0], wider])


def test_gine_without_edges_rejected(corpus):
    graphs, y = corpus
    est = small_regressor(backbone="gine", epochs_max=5)
    with pytest.raises(InvalidCombo):
        est.fit(graphs, y)


# ---------------------------------------------------------- classification

def test_classifier_predict_and_proba(corpus):
    graphs, y = corpus
    labels = np.where(y >= np.median(y), 7, 3)    # non-contiguous classes
    est = DirectedGraphClassifier(hidden_dim=16, num_layers=2,
                                  epochs_max=60, patience=10, seed=0)
    est.fit(graphs, labels)
    assert est.classes_.tolist() == [3, 7]
    pred = est.predict(graphs)
    assert set(pred) <= {3, 7}
    proba = est.predict_proba(graphs)
    assert proba.shape == (len(graphs), 2)
    assert np.allclose(proba.sum(axis=1), 1.0, atol=1e-12)
    assert np.array_equal(est.classes_[np.argmax(proba, axis=1)], pred)
    assert 0.0 <= est.score(graphs, labels) <= 1.0


def test_classifier_needs_two_classes(corpus):
    graphs, _ = corpus
    est = DirectedGraphClassifier(epochs_max=5)
    with pytest.raises(InvalidSpec):
        est.fit(graphs, np.zeros(len(graphs), dtype=int))


# ---------------------------------------------------------------- embedding

def test_embedding_shapes_and_determinism(corpus):
    graphs, _ = corpus
    emb = MagneticLaplacianEmbedding(q=0.1, d=3)
    out = emb.fit_transform(graphs)
    assert len(out) == len(graphs)
    for g, mat in zip(graphs, out):
        assert mat.shape == (g.num_nodes, 6)
        assert np.isfinite(mat).all()
    again = MagneticLaplacianEmbedding(q=0.1, d=3).fit(graphs).transform(graphs)
    for a, b in zip(out, again):
        assert np.array_equal(a, b)


def test_embedding_node_cap(corpus):
    graphs, _ = corpus
    emb = MagneticLaplacianEmbedding(q=0.0, d=2, node_cap=3)
    with pytest.raises(NodeCapExceeded):
        emb.fit(graphs).transform(graphs)


def test_check_graphs_consistency(corpus):
    graphs, _ = corpus
    gs, feat, edge = check_graphs(graphs)
    assert len(gs) == len(graphs) and feat >= 1 and edge == 0
