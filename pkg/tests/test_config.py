import pytest
import yaml

from dgrl.config import (
    RunConfig,
    config_from_obj,
    echo_config,
    parse_run_config,
    write_echo,
)
from dgrl.errors import ConfigError, NodeCapExceeded
from dgrl.tune import Dimension


def minimal_obj():
    return {"dataset": {"synthetic": {"num_graphs": 8,
                                      "node_range": [4, 6]}}}


def full_obj():
    return {
        "dataset": {"synthetic": {
            "num_graphs": 12, "node_range": [5, 9], "density": 0.25,
            "dag_only": True, "label_rule": "longest_path",
            "num_classes": 4, "ood_factor": 1.5, "seed": 11}},
        "model": {
            "backbone": "gat",
            "direction": {"mode": "bidirected", "combine": "sum"},
            "hidden_dim": 32, "num_layers": 2, "mlp_layers": 2,
            "dropout": 0.1, "heads": 4, "cheb_k": 1,
            "pe": {"mode": "npe", "q": 0.1, "d": 4, "m": 4, "c": 8}},
        "train": {"batch_size": 128, "lr": 0.002, "epochs_max": 40,
                  "patience": 5, "seed": 2},
        "protocol": {"seeds": [0, 1, 2]},
        "tune": {"budget": 7, "seed": 99, "space": {
            "hidden_dim": {"int_uniform": [96, 128]},
            "lr": {"log_uniform": [1.0e-4, 1.0e-3]},
            "batch_size": {"categorical": [32, 64]}}},
        "caps": {"pe_node_cap": 500, "gps_node_cap": 600},
        "output_dir": "runs/full",
    }


def write_config(tmp_path, obj, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(obj, sort_keys=False))
    return str(path)


# ---------------------------------------------------------------- defaults

def test_minimal_config_fills_defaults(tmp_path):
    cfg = parse_run_config(write_config(tmp_path, minimal_obj()))
    assert cfg.model.backbone == "gin"
    assert cfg.model.direction.mode == "plane"
    assert cfg.model.pe.mode == "none"
    assert cfg.train.batch_size == 64
    assert cfg.seeds == tuple(range(10))
    assert cfg.pe_node_cap == 2000
    assert cfg.gps_node_cap == 5000
    assert cfg.tune_budget == 100 and cfg.tune_seed == 123
    assert cfg.synthetic.num_graphs == 8
    assert cfg.synthetic_seed == 0
    echo = echo_config(cfg)
    assert echo["model"]["hidden_dim"] == 64
    assert echo["train"]["lr"] == pytest.approx(1e-3)
    assert echo["dataset"]["synthetic"]["density"] == pytest.approx(0.3)


def test_echo_fixed_point_minimal(tmp_path):
    cfg = parse_run_config(write_config(tmp_path, minimal_obj()))
    assert config_from_obj(echo_config(cfg)) == cfg


def test_echo_fixed_point_full(tmp_path):
    cfg = parse_run_config(write_config(tmp_path, full_obj()))
    path = tmp_path / "echo.yaml"
    write_echo(cfg, path)
    again = parse_run_config(str(path))
    assert again == cfg
    assert again.space == (
        ("batch_size", Dimension("categorical", values=(32, 64))),
        ("hidden_dim", Dimension("int_uniform", lo=96, hi=128)),
        ("lr", Dimension("log_uniform", lo=1e-4, hi=1e-3)),
    )


def test_full_config_parsed_values(tmp_path):
    cfg = parse_run_config(write_config(tmp_path, full_obj()))
    assert cfg.model.backbone == "gat"
    assert cfg.model.direction.combine == "sum"
    assert cfg.model.pe.q == pytest.approx(0.1)
    assert cfg.train.lr == pytest.approx(0.002)
    assert cfg.seeds == (0, 1, 2)
    assert cfg.tune_budget == 7
    assert cfg.synthetic_seed == 11
    assert cfg.output_dir == "runs/full"


# -------------------------------------------------------------- strictness

def test_unknown_keys_named_with_path(tmp_path):
    obj = minimal_obj()
    obj["modle"] = {}
    with pytest.raises(ConfigError, match="modle"):
        config_from_obj(obj)

    obj = minimal_obj()
    obj["model"] = {"hiden_dim": 3}
    with pytest.raises(ConfigError, match=r"model\.hiden_dim"):
        config_from_obj(obj)

    obj = minimal_obj()
    obj["dataset"]["synthetic"]["bogus"] = 1
    with pytest.raises(ConfigError, match=r"dataset\.synthetic\.bogus"):
        config_from_obj(obj)

    obj = minimal_obj()
    obj["model"] = {"pe": {"qq": 0.1}}
    with pytest.raises(ConfigError, match=r"model\.pe\.qq"):
        config_from_obj(obj)


def test_type_errors_named_with_path():
    obj = minimal_obj()
    obj["model"] = {"hidden_dim": "big"}
    with pytest.raises(ConfigError, match=r"model\.hidden_dim"):
        config_from_obj(obj)

    obj = minimal_obj()
    obj["train"] = {"lr": "fast"}
    with pytest.raises(ConfigError, match=r"train\.lr"):
        config_from_obj(obj)

    obj = minimal_obj()
    obj["train"] = {"batch_size": True}
    with pytest.raises(ConfigError, match=r"train\.batch_size"):
        config_from_obj(obj)

    obj = minimal_obj()
    obj["protocol"] = {"seeds": [0, "one"]}
    with pytest.raises(ConfigError, match=r"protocol\.seeds"):
        config_from_obj(obj)

    obj = minimal_obj()
    obj["dataset"]["synthetic"]["node_range"] = [4]
    with pytest.raises(ConfigError, match=r"node_range"):
        config_from_obj(obj)


def test_dataset_needs_exactly_one_source(tmp_path):
    with pytest.raises(ConfigError, match="exactly one"):
        config_from_obj({"dataset": {}})
    data = tmp_path / "d.jsonl"
    data.write_text("")
    obj = {"dataset": {"path": str(data),
                       "synthetic": {"num_graphs": 2, "node_range": [3, 4]}}}
    with pytest.raises(ConfigError, match="exactly one"):
        config_from_obj(obj)


def test_dataset_path_must_exist(tmp_path):
    with pytest.raises(ConfigError, match=r"dataset\.path"):
        config_from_obj({"dataset": {"path": str(tmp_path / "missing.jsonl")}})
    data = tmp_path / "ok.jsonl"
    data.write_text("")
    cfg = config_from_obj({"dataset": {"path": str(data)}})
    assert cfg.dataset_path == str(data)
    assert cfg.synthetic is None


def test_caps_must_be_positive():
    obj = minimal_obj()
    obj["caps"] = {"pe_node_cap": 0}
    with pytest.raises(ConfigError, match="caps"):
        config_from_obj(obj)


def test_model_validation_wrapped_with_section():
    obj = minimal_obj()
    obj["model"] = {"dropout": 1.5}
    with pytest.raises(ConfigError, match="model"):
        config_from_obj(obj)
    obj = minimal_obj()
    obj["model"] = {"direction": {"mode": "sideways"}}
    with pytest.raises(ConfigError, match="model"):
        config_from_obj(obj)


def test_synthetic_validation_wrapped():
    obj = minimal_obj()
    obj["dataset"]["synthetic"]["density"] = 0.0
    with pytest.raises(ConfigError, match=r"dataset\.synthetic"):
        config_from_obj(obj)
    obj = minimal_obj()
    obj["dataset"]["synthetic"]["label_rule"] = "nonesuch"
    with pytest.raises(ConfigError, match="label_rule"):
        config_from_obj(obj)


# --------------------------------------------------------------- tune space

def test_space_override_parsing():
    obj = minimal_obj()
    obj["tune"] = {"space": {"lr": {"log_uniform": [1e-5, 1e-3]}}}
    cfg = config_from_obj(obj)
    assert cfg.space == (("lr", Dimension("log_uniform", lo=1e-5, hi=1e-3)),)


def test_space_override_rejects_bad_dims():
    obj = minimal_obj()
    obj["tune"] = {"space": {"lr": {"triangular": [1, 2]}}}
    with pytest.raises(ConfigError, match=r"tune\.space\.lr"):
        config_from_obj(obj)
    obj["tune"] = {"space": {"lr": {"log_uniform": [1, 2, 3]}}}
    with pytest.raises(ConfigError, match=r"tune\.space\.lr"):
        config_from_obj(obj)
    obj["tune"] = {"space": {"lr": {"log_uniform": [2, 1]}}}
    with pytest.raises(ConfigError, match=r"tune\.space\.lr"):
        config_from_obj(obj)
    obj["tune"] = {"budget": 0}
    with pytest.raises(ConfigError, match=r"tune\.budget"):
        config_from_obj(obj)


# -------------------------------------------------------------- cross-field

def test_gps_cap_raises_node_cap_exceeded():
    obj = minimal_obj()
    obj["model"] = {"backbone": "gps_t"}
    obj["dataset"]["synthetic"]["node_range"] = [40, 60]
    obj["caps"] = {"gps_node_cap": 80}
    with pytest.raises(NodeCapExceeded, match="gps_node_cap") as err:
        config_from_obj(obj)
    assert isinstance(err.value, ConfigError)


def test_pe_cap_checked_for_synthetic():
    obj = minimal_obj()
    obj["model"] = {"pe": {"mode": "npe"}}
    obj["dataset"]["synthetic"]["node_range"] = [40, 60]
    obj["caps"] = {"pe_node_cap": 50}
    with pytest.raises(NodeCapExceeded, match="pe_node_cap"):
        config_from_obj(obj)


def test_gine_needs_edge_features_or_epe():
    obj = minimal_obj()
    obj["model"] = {"backbone": "gine"}
    with pytest.raises(ConfigError, match="gine"):
        config_from_obj(obj)
    obj["model"] = {"backbone": "gine", "pe": {"mode": "epe"}}
    assert config_from_obj(obj).model.backbone == "gine"


def test_gin_rejects_pairwise_pe():
    obj = minimal_obj()
    obj["model"] = {"backbone": "gin", "pe": {"mode": "epe"}}
    with pytest.raises(ConfigError, match="gine"):
        config_from_obj(obj)


# ----------------------------------------------------------------- parsing

def test_yaml_errors_become_config_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("model: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        parse_run_config(str(bad))
    with pytest.raises(ConfigError, match="cannot read"):
        parse_run_config(str(tmp_path / "absent.yaml"))
    listy = tmp_path / "list.yaml"
    listy.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        parse_run_config(str(listy))


def test_empty_file_is_missing_dataset(tmp_path):
    empty = tmp_path / "empty.yaml"
    empty.write_text("")
    with pytest.raises(ConfigError, match="dataset"):
        parse_run_config(str(empty))
