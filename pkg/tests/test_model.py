"""Model assembly: combo validation, dimension bookkeeping, readout,
determinism, and checkpoint round-trips."""

import numpy as np
import pytest

import dgrl.autodiff as ad
import dgrl.model as M
from dgrl.errors import (InvalidCombo, InvalidSpec, ParseError, SchemaError,
                         ShapeMismatch)
from dgrl.graphs import TaskSpec, build_graph
from dgrl.layers import DirectionMode
from dgrl.pe import PEConfig

REG = TaskSpec("graph", "regression", ("mse",), dim=1)
NODE_REG = TaskSpec("node", "regression", ("mse",), dim=2)
NODE_CLS = TaskSpec("node", "classification", ("accuracy",), num_classes=3)


def cfg_of(backbone="gin", mode="plane", combine=None, pe="none", **kw):
    return M.ModelConfig(backbone=backbone,
                         direction=DirectionMode(mode, combine),
                         pe=PEConfig(mode=pe, q=kw.pop("q", 0.0),
                                     d=kw.pop("d", 4), m=kw.pop("m", 2),
                                     c=kw.pop("c", 3)),
                         hidden_dim=kw.pop("hidden_dim", 8), **kw)


def graph_of(rng, n=6, m=8, edge_dim=0, feat_dim=3):
    pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
    idx = rng.choice(len(pairs), size=m, replace=False)
    edges = np.array([pairs[k] for k in idx], dtype=np.int64)
    return build_graph(
        n, edges, rng.normal(size=(n, feat_dim)),
        edge_features=rng.normal(size=(m, edge_dim)) if edge_dim else None)


class TestMethodName:
    @pytest.mark.parametrize("cfg,expect", [
        (("gine", "bidirected", None, "epe"), "BI-GINE+EPE"),
        (("gin", "plane", None, "none"), "GIN"),
        (("gcn", "directed", None, "none"), "DI-GCN"),
        (("gat", "bidirected", "sum", "npe"), "BI-GAT+NPE"),
        (("gps_t", "plane", None, "none"), "GPS-T"),
        (("magnet", "plane", None, "npe"), "MagNet+NPE"),
    ])
    def test_frozen_names(self, cfg, expect):
        backbone, mode, combine, pe = cfg
        assert M.method_name(cfg_of(backbone, mode, combine, pe)) == expect

    def test_magnet_never_takes_direction_prefix(self):
        with pytest.warns(UserWarning):
            name = M.method_name(cfg_of("magnet", "bidirected"))
            M.build_model(cfg_of("magnet", "bidirected"), 3, 0, REG)
        assert name == "MagNet"


class TestComboValidation:
    def test_magnet_rejects_pairwise_encoding(self):
        with pytest.raises(InvalidCombo):
            M.build_model(cfg_of("magnet", pe="epe"), 3, 0, REG)

    def test_magnet_warns_on_direction_flag(self):
        with pytest.warns(UserWarning, match="direction"):
            M.build_model(cfg_of("magnet", "directed"), 3, 0, REG)

    def test_magnet_warns_on_edge_features(self):
        with pytest.warns(UserWarning, match="edge features"):
            M.build_model(cfg_of("magnet"), 3, 2, REG)

    def test_gine_needs_edge_features_or_epe(self):
        with pytest.raises(InvalidCombo):
            M.build_model(cfg_of("gine"), 3, 0, REG)
        M.build_model(cfg_of("gine"), 3, 2, REG)
        M.build_model(cfg_of("gine", pe="epe"), 3, 0, REG)

    def test_gin_rejects_pairwise_encoding(self):
        # no edge terms means the epe networks would never receive gradients
        with pytest.raises(InvalidCombo, match="gine"):
            M.build_model(cfg_of("gin", pe="epe"), 3, 0, REG)

    def test_gin_warns_when_edge_features_ignored(self):
        with pytest.warns(UserWarning, match="gin omits"):
            M.build_model(cfg_of("gin"), 3, 2, REG)

    def test_cheb_stub_rejects_higher_order(self):
        with pytest.raises(InvalidCombo):
            M.build_model(cfg_of("magnet", cheb_k=2), 3, 0, REG)

    def test_heads_must_divide_hidden(self):
        with pytest.raises(InvalidCombo):
            M.build_model(cfg_of("gat", hidden_dim=6, heads=4), 3, 0, REG)

    def test_config_ranges(self):
        with pytest.raises(InvalidSpec):
            M.ModelConfig(backbone="sage")
        with pytest.raises(InvalidSpec):
            M.ModelConfig(dropout=1.0)
        with pytest.raises(InvalidSpec):
            M.ModelConfig(num_layers=0)


class TestAssembly:
    def test_npe_widens_input_projection(self):
        model = M.build_model(cfg_of("gin", "bidirected", pe="npe", d=4),
                              3, 0, REG)
        assert model.store.get("encode.W0").shape == (3 + 8, 8)

    def test_plain_input_projection(self):
        model = M.build_model(cfg_of("gin"), 3, 0, REG)
        assert model.store.get("encode.W0").shape == (3, 8)

    def test_parameter_count_deterministic(self):
        a = M.build_model(cfg_of("gat", "bidirected", num_layers=2), 3, 0, REG)
        b = M.build_model(cfg_of("gat", "bidirected", num_layers=2), 3, 0, REG)
        assert a.num_params == b.num_params
        assert a.store.names() == b.store.names()

    def test_same_seed_same_parameters(self):
        a = M.build_model(cfg_of("gps_t", hidden_dim=8, heads=2), 3, 0, REG,
                          seed=5)
        b = M.build_model(cfg_of("gps_t", hidden_dim=8, heads=2), 3, 0, REG,
                          seed=5)
        for name in a.store.names():
            np.testing.assert_array_equal(a.store.get(name).values,
                                          b.store.get(name).values)

    def test_magnet_head_sees_both_parts(self):
        model = M.build_model(cfg_of("magnet", hidden_dim=8), 3, 0, REG)
        assert model.store.get("head.W0").shape == (16, 8)

    def test_gps_epe_bias_projection_per_layer(self):
        model = M.build_model(cfg_of("gps_t", pe="epe", heads=2,
                                     num_layers=3), 3, 0, REG)
        assert len(model.bias_projs) == 3
        assert model.store.get("layer0.bias_proj").shape == (3, 2)


class TestReadout:
    def test_graph_mean_pool_hand_value(self):
        store = ad.ParamStore(seed=0)
        head = ad.MLP(store, "head", (1, 1))
        store.get("head.W0").values[...] = 1.0
        out = M.readout(ad.Tensor(np.array([[1.0], [3.0]])), REG, head)
        np.testing.assert_allclose(out.values, [[2.0]], atol=1e-14)

    def test_node_task_keeps_all_rows(self):
        store = ad.ParamStore(seed=0)
        head = ad.MLP(store, "head", (1, 2))
        out = M.readout(ad.Tensor(np.zeros((5, 1))), NODE_REG, head)
        assert out.shape == (5, 2)


class TestForward:
    def test_shapes_per_task(self):
        rng = np.random.default_rng(0)
        g = graph_of(rng)
        node_model = M.build_model(cfg_of("gin"), 3, 0, NODE_CLS)
        assert node_model.forward(g).shape == (6, 3)
        graph_model = M.build_model(cfg_of("gin"), 3, 0, REG)
        assert graph_model.forward(g).shape == (1, 1)

    @pytest.mark.parametrize("backbone,pe", [
        ("gcn", "none"), ("gin", "npe"), ("gine", "epe"), ("gat", "none"),
        ("magnet", "none"), ("magnet", "npe"), ("gps_t", "epe"),
    ])
    def test_every_combo_runs_both_levels(self, backbone, pe):
        rng = np.random.default_rng(1)
        edge_dim = 2 if backbone == "gine" else 0
        g = graph_of(rng, edge_dim=edge_dim)
        for task in (REG, NODE_REG):
            model = M.build_model(
                cfg_of(backbone, "bidirected" if backbone != "magnet" else "plane",
                       pe=pe, q=0.1, heads=2),
                3, edge_dim, task)
            out = model.forward(g)
            assert out.shape == ((1, 1) if task.level == "graph" else (6, 2))
            assert np.all(np.isfinite(out.values))

    def test_forward_deterministic(self):
        rng = np.random.default_rng(2)
        g = graph_of(rng)
        a = M.build_model(cfg_of("gat", "bidirected", heads=2), 3, 0, REG, seed=3)
        b = M.build_model(cfg_of("gat", "bidirected", heads=2), 3, 0, REG, seed=3)
        np.testing.assert_array_equal(a.forward(g).values, b.forward(g).values)

    def test_feature_dim_checked(self):
        g = graph_of(np.random.default_rng(3), feat_dim=4)
        model = M.build_model(cfg_of("gin"), 3, 0, REG)
        with pytest.raises(ShapeMismatch):
            model.forward(g)

    def test_dropout_needs_rng_and_is_seed_stable(self):
        rng = np.random.default_rng(4)
        g = graph_of(rng)
        model = M.build_model(cfg_of("gin", dropout=0.2), 3, 0, REG)
        with pytest.raises(InvalidSpec):
            model.forward(g, train=True)
        o1 = model.forward(g, train=True, rng=np.random.default_rng(9))
        o2 = model.forward(g, train=True, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(o1.values, o2.values)
        o3 = model.forward(g, train=True, rng=np.random.default_rng(10))
        assert np.max(np.abs(o1.values - o3.values)) > 0

    def test_eval_mode_ignores_dropout_rate(self):
        rng = np.random.default_rng(5)
        g = graph_of(rng)
        dropped = M.build_model(cfg_of("gin", dropout=0.3), 3, 0, REG, seed=1)
        plain = M.build_model(cfg_of("gin", dropout=0.0), 3, 0, REG, seed=1)
        np.testing.assert_array_equal(dropped.forward(g).values,
                                      plain.forward(g).values)


class TestEquivariance:
    def permute(self, g, perm):
        x = np.empty_like(g.node_features)
        x[perm] = g.node_features
        return build_graph(g.num_nodes, perm[g.edges], x)

    @pytest.mark.parametrize("backbone,pe", [
        ("gin", "none"), ("gcn", "none"), ("gat", "none"),
        ("gps_t", "none"), ("magnet", "none"),
        ("gine", "epe"), ("gps_t", "epe"),
    ])
    def test_node_outputs_follow_permutation(self, backbone, pe):
        rng = np.random.default_rng(6)
        g = graph_of(rng, n=7, m=10)
        perm = rng.permutation(7)
        g2 = self.permute(g, perm)
        mode = "plane" if backbone == "magnet" else "bidirected"
        model = M.build_model(cfg_of(backbone, mode, pe=pe, q=0.1, heads=2),
                              3, 0, NODE_REG)
        out = model.forward(g).values
        out2 = model.forward(g2).values
        tol = 1e-8 if pe == "epe" else 1e-9
        assert np.max(np.abs(out2[perm] - out)) < tol

    def test_graph_prediction_permutation_invariant(self):
        rng = np.random.default_rng(7)
        g = graph_of(rng, n=7, m=10)
        perm = rng.permutation(7)
        g2 = self.permute(g, perm)
        model = M.build_model(cfg_of("gin", "bidirected"), 3, 0, REG)
        assert abs(model.forward(g).values[0, 0]
                   - model.forward(g2).values[0, 0]) < 1e-12


class TestCheckpoint:
    def build(self, seed=11):
        return M.build_model(cfg_of("gat", "bidirected", pe="npe", heads=2,
                                    num_layers=2), 3, 0, NODE_CLS, seed=seed)

    def test_round_trip_bitwise(self, tmp_path):
        model = self.build()
        rng = np.random.default_rng(0)
        for name in model.store.names():
            model.store.get(name).values[...] = rng.normal(
                size=model.store.get(name).shape)
        path = tmp_path / "model.ckpt"
        M.save_checkpoint(model, path, rng_state={"count": 7})
        loaded, header = M.load_checkpoint(path)
        assert header["rng_state"] == {"count": 7}
        assert loaded.cfg == model.cfg
        assert loaded.task == model.task
        for name in model.store.names():
            np.testing.assert_array_equal(loaded.store.get(name).values,
                                          model.store.get(name).values)
        out_a = model.forward(graph_of(np.random.default_rng(1)))
        out_b = loaded.forward(graph_of(np.random.default_rng(1)))
        np.testing.assert_array_equal(out_a.values, out_b.values)

    def test_truncated_payload_rejected(self, tmp_path):
        model = self.build()
        path = tmp_path / "model.ckpt"
        M.save_checkpoint(model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])
        with pytest.raises(ParseError, match="truncated"):
            M.load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        model = self.build()
        path = tmp_path / "model.ckpt"
        M.save_checkpoint(model, path)
        path.write_bytes(path.read_bytes() + b"\x00" * 8)
        with pytest.raises(ParseError, match="trailing"):
            M.load_checkpoint(path)

    def test_wrong_format_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b'{"format": "other"}\n')
        with pytest.raises(ParseError, match="format"):
            M.load_checkpoint(path)

    def test_garbage_header_rejected(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"\xff\xfe not json\n")
        with pytest.raises(ParseError):
            M.load_checkpoint(path)

    def test_missing_header_key_rejected(self, tmp_path):
        import json
        model = self.build()
        path = tmp_path / "model.ckpt"
        M.save_checkpoint(model, path)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            blob = fh.read()
        del header["task"]
        path.write_bytes((json.dumps(header) + "\n").encode() + blob)
        with pytest.raises(SchemaError, match="task"):
            M.load_checkpoint(path)

    def test_config_dict_round_trip(self):
        cfg = cfg_of("gps_t", "bidirected", "sum", pe="epe", q=0.1,
                     dropout=0.2, heads=2)
        assert M.config_from_dict(M.config_to_dict(cfg)) == cfg
        with pytest.raises(SchemaError):
            M.config_from_dict({"backbone": "gin"})
