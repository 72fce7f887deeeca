"""Run-configuration schema: strict YAML in, validated RunConfig out.

Unknown keys are rejected with their full field path.  The echoed config
(every default filled in) re-parses to an identical RunConfig, which is
what run manifests store for provenance.
"""

import math
import os
from dataclasses import dataclass

import yaml

from .errors import ConfigError, NodeCapExceeded
from .layers import GPS_NODE_CAP, DirectionMode
from .model import ModelConfig
from .pe import PE_NODE_CAP, PEConfig
from .synthetic import (LOCAL_MOTIF_COUNT, LONGEST_PATH, SyntheticSpec,
                        validate_spec)
from .train import DEFAULT_SEEDS, TrainConfig
from .tune import (Dimension, categorical, int_uniform, log_uniform,
                   uniform)

_REQUIRED = object()
_DIM_KINDS = {"categorical": categorical, "uniform": uniform,
              "log_uniform": log_uniform, "int_uniform": int_uniform}

TUNE_BUDGET = 100
TUNE_SEED = 123


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    seeds: tuple
    output_dir: str
    dataset_path: str = ""
    synthetic: SyntheticSpec = None
    synthetic_seed: int = 0
    pe_node_cap: int = PE_NODE_CAP
    tune_budget: int = TUNE_BUDGET
    tune_seed: int = TUNE_SEED
    space: tuple = ()            # (name, Dimension) search-space overrides

    @property
    def gps_node_cap(self):
        return self.model.gps_node_cap


class _Section:
    """One mapping level; tracks consumed keys so leftovers can be named."""

    def __init__(self, obj, path):
        if obj is None:
            obj = {}
        if not isinstance(obj, dict):
            raise ConfigError(f"{path or 'config'}: expected a mapping")
        self.obj = dict(obj)
        self.path = path

    def _at(self, key):
        return f"{self.path}.{key}" if self.path else key

    def pop(self, key, default=_REQUIRED):
        if key not in self.obj:
            if default is _REQUIRED:
                raise ConfigError(f"{self._at(key)}: missing required key")
            return default
        return self.obj.pop(key)

    def pop_int(self, key, default=_REQUIRED):
        v = self.pop(key, default)
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(f"{self._at(key)}: expected an integer")
        return v

    def pop_float(self, key, default=_REQUIRED):
        v = self.pop(key, default)
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{self._at(key)}: expected a number")
        return float(v)

    def pop_str(self, key, default=_REQUIRED):
        v = self.pop(key, default)
        if not isinstance(v, str):
            raise ConfigError(f"{self._at(key)}: expected a string")
        return v

    def pop_bool(self, key, default=_REQUIRED):
        v = self.pop(key, default)
        if not isinstance(v, bool):
            raise ConfigError(f"{self._at(key)}: expected a boolean")
        return v

    def section(self, key):
        return _Section(self.pop(key, {}), self._at(key))

    def done(self):
        if self.obj:
            key = sorted(self.obj)[0]
            raise ConfigError(f"{self._at(key)}: unknown key")


def _int_pair(sec, key, default):
    v = sec.pop(key, default)
    if (not isinstance(v, (list, tuple)) or len(v) != 2
            or any(isinstance(x, bool) or not isinstance(x, int) for x in v)):
        raise ConfigError(f"{sec._at(key)}: expected a pair of integers")
    return (int(v[0]), int(v[1]))


def _parse_dataset(sec):
    path = sec.pop_str("path", "")
    syn_obj = sec.pop("synthetic", None)
    if bool(path) == (syn_obj is not None):
        raise ConfigError("dataset: need exactly one of path / synthetic")
    if path:
        sec.done()
        if not os.path.exists(path):
            raise ConfigError(f"dataset.path: file not found: {path}")
        return path, None, 0
    syn = _Section(syn_obj, "dataset.synthetic")
    fields = {
        "num_graphs": syn.pop_int("num_graphs"),
        "node_range": _int_pair(syn, "node_range", _REQUIRED),
        "density": syn.pop_float("density", 0.3),
        "dag_only": syn.pop_bool("dag_only", True),
        "label_rule": syn.pop_str("label_rule", LONGEST_PATH),
        "num_classes": syn.pop_int("num_classes", 4),
        "ood_factor": syn.pop_float("ood_factor", 1.5),
    }
    seed = syn.pop_int("seed", 0)
    syn.done()
    sec.done()
    if fields["label_rule"] not in (LONGEST_PATH, LOCAL_MOTIF_COUNT):
        raise ConfigError(
            "dataset.synthetic.label_rule: unknown rule "
            f"{fields['label_rule']!r}")
    try:
        spec = SyntheticSpec(**fields)
        validate_spec(spec)
    except Exception as exc:
        raise ConfigError(f"dataset.synthetic: {exc}") from exc
    return "", spec, seed


def _parse_model(sec, gps_node_cap):
    dsec = sec.section("direction")
    mode = dsec.pop_str("mode", "plane")
    combine = dsec.pop_str("combine", "")
    dsec.done()
    psec = sec.section("pe")
    pe_fields = {
        "mode": psec.pop_str("mode", "none"),
        "q": psec.pop_float("q", 0.0),
        "d": psec.pop_int("d", 8),
        "m": psec.pop_int("m", 4),
        "c": psec.pop_int("c", 8),
    }
    psec.done()
    fields = {
        "backbone": sec.pop_str("backbone", "gin"),
        "hidden_dim": sec.pop_int("hidden_dim", 64),
        "num_layers": sec.pop_int("num_layers", 3),
        "mlp_layers": sec.pop_int("mlp_layers", 2),
        "dropout": sec.pop_float("dropout", 0.0),
        "heads": sec.pop_int("heads", 4),
        "cheb_k": sec.pop_int("cheb_k", 1),
    }
    sec.done()
    try:
        direction = DirectionMode(mode, combine or None)
        pe = PEConfig(**pe_fields)
        return ModelConfig(direction=direction, pe=pe,
                           gps_node_cap=gps_node_cap, **fields)
    except Exception as exc:
        raise ConfigError(f"model: {exc}") from exc


def _parse_train(sec):
    fields = {
        "batch_size": sec.pop_int("batch_size", 64),
        "lr": sec.pop_float("lr", 1e-3),
        "epochs_max": sec.pop_int("epochs_max", 1000),
        "patience": sec.pop_int("patience", 50),
        "seed": sec.pop_int("seed", 0),
    }
    sec.done()
    try:
        return TrainConfig(**fields)
    except Exception as exc:
        raise ConfigError(f"train: {exc}") from exc


def _parse_dim(obj, path):
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ConfigError(
            f"{path}: expected exactly one of "
            f"{{{', '.join(sorted(_DIM_KINDS))}}}")
    kind, args = next(iter(obj.items()))
    if kind not in _DIM_KINDS:
        raise ConfigError(f"{path}.{kind}: unknown dimension kind")
    if not isinstance(args, (list, tuple)) or not args:
        raise ConfigError(f"{path}.{kind}: expected a non-empty list")
    try:
        if kind == "categorical":
            return categorical(*args)
        if len(args) != 2:
            raise ConfigError(f"{path}.{kind}: expected [lo, hi]")
        return _DIM_KINDS[kind](args[0], args[1])
    except ConfigError:
        raise
    except Exception as exc:
        raise ConfigError(f"{path}.{kind}: {exc}") from exc


def _parse_tune(sec):
    budget = sec.pop_int("budget", TUNE_BUDGET)
    seed = sec.pop_int("seed", TUNE_SEED)
    space_obj = sec.pop("space", {})
    sec.done()
    if budget < 1:
        raise ConfigError("tune.budget: must be >= 1")
    if not isinstance(space_obj, dict):
        raise ConfigError("tune.space: expected a mapping")
    space = tuple((name, _parse_dim(dim, f"tune.space.{name}"))
                  for name, dim in sorted(space_obj.items()))
    return budget, seed, space


def config_from_obj(obj):
    root = _Section(obj, "")
    caps = root.section("caps")
    pe_node_cap = caps.pop_int("pe_node_cap", PE_NODE_CAP)
    gps_node_cap = caps.pop_int("gps_node_cap", GPS_NODE_CAP)
    caps.done()
    if pe_node_cap < 1 or gps_node_cap < 1:
        raise ConfigError("caps: node caps must be positive")

    dataset_path, synthetic, synthetic_seed = _parse_dataset(
        root.section("dataset"))
    model = _parse_model(root.section("model"), gps_node_cap)
    train_cfg = _parse_train(root.section("train"))

    proto = root.section("protocol")
    seeds = proto.pop("seeds", list(DEFAULT_SEEDS))
    proto.done()
    if (not isinstance(seeds, (list, tuple)) or not seeds
            or any(isinstance(s, bool) or not isinstance(s, int)
                   for s in seeds)):
        raise ConfigError("protocol.seeds: expected a non-empty integer list")

    tune_budget, tune_seed, space = _parse_tune(root.section("tune"))
    output_dir = root.pop_str("output_dir", "runs")
    root.done()

    cfg = RunConfig(model=model, train=train_cfg, seeds=tuple(seeds),
                    output_dir=output_dir, dataset_path=dataset_path,
                    synthetic=synthetic, synthetic_seed=synthetic_seed,
                    pe_node_cap=pe_node_cap, tune_budget=tune_budget,
                    tune_seed=tune_seed, space=space)
    _check_cross_field(cfg)
    return cfg


def _check_cross_field(cfg):
    if cfg.model.backbone == "gin" and cfg.model.pe.mode == "epe":
        raise ConfigError(
            "model.pe.mode: gin has no edge terms to carry pairwise "
            "encodings; use gine")
    syn = cfg.synthetic
    if syn is None:
        return          # path datasets are checked once loaded
    _, hi = syn.node_range
    max_nodes = math.ceil(hi * syn.ood_factor)
    # NodeCapExceeded is a ConfigError, but carries the resource-cap exit code
    if cfg.model.backbone == "gps_t" and max_nodes > cfg.gps_node_cap:
        raise NodeCapExceeded(
            f"caps.gps_node_cap: dataset can reach {max_nodes} nodes, "
            f"above gps_node_cap={cfg.gps_node_cap}")
    if cfg.model.pe.mode != "none" and max_nodes > cfg.pe_node_cap:
        raise NodeCapExceeded(
            f"caps.pe_node_cap: dataset can reach {max_nodes} nodes, "
            f"above pe_node_cap={cfg.pe_node_cap}")
    if (cfg.model.backbone == "gine" and cfg.model.pe.mode != "epe"):
        raise ConfigError(
            "model.backbone: gine needs edge features, which synthetic "
            "datasets lack; use pe.mode=epe or another backbone")


def parse_run_config(path):
    try:
        with open(path) as fh:
            obj = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML in {path}: {exc}") from exc
    return config_from_obj(obj)


def _echo_dim(dim):
    if dim.kind == "categorical":
        return {"categorical": list(dim.values)}
    if dim.kind == "int_uniform":
        return {dim.kind: [int(dim.lo), int(dim.hi)]}
    return {dim.kind: [dim.lo, dim.hi]}


def echo_config(cfg):
    """Full dict with every default filled; parses back to an equal config."""
    if cfg.synthetic is not None:
        syn = cfg.synthetic
        dataset = {"synthetic": {
            "num_graphs": syn.num_graphs,
            "node_range": list(syn.node_range),
            "density": syn.density,
            "dag_only": syn.dag_only,
            "label_rule": syn.label_rule,
            "num_classes": syn.num_classes,
            "ood_factor": syn.ood_factor,
            "seed": cfg.synthetic_seed,
        }}
    else:
        dataset = {"path": cfg.dataset_path}
    m = cfg.model
    return {
        "dataset": dataset,
        "model": {
            "backbone": m.backbone,
            "direction": {"mode": m.direction.mode,
                          "combine": m.direction.combine or ""},
            "hidden_dim": m.hidden_dim,
            "num_layers": m.num_layers,
            "mlp_layers": m.mlp_layers,
            "dropout": m.dropout,
            "heads": m.heads,
            "cheb_k": m.cheb_k,
            "pe": {"mode": m.pe.mode, "q": m.pe.q, "d": m.pe.d,
                   "m": m.pe.m, "c": m.pe.c},
        },
        "train": {
            "batch_size": cfg.train.batch_size,
            "lr": cfg.train.lr,
            "epochs_max": cfg.train.epochs_max,
            "patience": cfg.train.patience,
            "seed": cfg.train.seed,
        },
        "protocol": {"seeds": list(cfg.seeds)},
        "tune": {
            "budget": cfg.tune_budget,
            "seed": cfg.tune_seed,
            "space": {name: _echo_dim(dim) for name, dim in cfg.space},
        },
        "caps": {"pe_node_cap": cfg.pe_node_cap,
                 "gps_node_cap": cfg.gps_node_cap},
        "output_dir": cfg.output_dir,
    }


def write_echo(cfg, path):
    with open(path, "w") as fh:
        yaml.safe_dump(echo_config(cfg), fh, sort_keys=False)
