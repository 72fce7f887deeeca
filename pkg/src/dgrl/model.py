"""Model assembly: combo validation, positional-encoding plumbing, layer
stacks, readout heads, and versioned binary checkpoints.

A Model owns one ParamStore seeded at build time, so the parameter count
and initial values are a pure function of (config, feature dims, task,
seed).  Spectral decompositions are constants cached per graph; the
stable pairwise encoding is rebuilt inside every forward pass because it
carries gradients into its two networks.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import InvalidCombo, InvalidSpec, ParseError, SchemaError, ShapeMismatch
from .graphs import task_from_dict, task_to_dict
from .layers import (GPS_NODE_CAP, DirectionMode, GATLayer, GCNLayer,
                     GINLayer, GPSLayer, MagNetLayer, branch_edge_features,
                     expand_direction)
from .pe import (EPENetworks, PEConfig, compute_pe_basis, epe, epe_attn_bias,
                 epe_slice_at, magnetic_laplacian, npe)

BACKBONES = ("gcn", "gin", "gine", "gat", "magnet", "gps_t")
CHECKPOINT_FORMAT = "dgrl-model"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "gin"
    direction: DirectionMode = field(default_factory=DirectionMode)
    hidden_dim: int = 64
    num_layers: int = 3
    mlp_layers: int = 2
    dropout: float = 0.0
    heads: int = 4
    pe: PEConfig = field(default_factory=PEConfig)
    cheb_k: int = 1
    gps_node_cap: int = GPS_NODE_CAP

    def __post_init__(self):
        if self.backbone not in BACKBONES:
            raise InvalidSpec(f"unknown backbone {self.backbone!r}")
        for name in ("hidden_dim", "num_layers", "mlp_layers", "heads",
                     "cheb_k", "gps_node_cap"):
            if getattr(self, name) < 1:
                raise InvalidSpec(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidSpec(f"dropout {self.dropout} outside [0, 1)")


_PREFIX = {"plane": "", "directed": "DI-", "bidirected": "BI-"}
_BASE = {"gcn": "GCN", "gin": "GIN", "gine": "GINE", "gat": "GAT",
         "magnet": "MagNet", "gps_t": "GPS-T"}
_SUFFIX = {"none": "", "npe": "+NPE", "epe": "+EPE"}


def method_name(cfg):
    """Reporting label, e.g. BI-GIN+EPE; the spectral backbone never takes
    a direction prefix since it ignores the flag."""
    prefix = "" if cfg.backbone == "magnet" else _PREFIX[cfg.direction.mode]
    return prefix + _BASE[cfg.backbone] + _SUFFIX[cfg.pe.mode]


def validate_combo(cfg, edge_feature_dim):
    if cfg.cheb_k != 1:
        raise InvalidCombo(
            "cheb_k is a stub and only supports 1 (first-order propagation)")
    if cfg.backbone == "magnet":
        if cfg.pe.mode == "epe":
            raise InvalidCombo(
                "magnet accepts only scalar edge weights and cannot "
                "consume pairwise positional encodings")
        if cfg.direction.mode != "plane":
            warnings.warn("magnet ignores the direction flag; its spectral "
                          "propagation already encodes edge direction")
        if edge_feature_dim:
            warnings.warn("magnet ignores edge features")
    if cfg.backbone == "gine" and not edge_feature_dim and cfg.pe.mode != "epe":
        raise InvalidCombo("gine requires edge features or pe.mode=epe")
    if cfg.backbone == "gin":
        if cfg.pe.mode == "epe":
            raise InvalidCombo(
                "gin has no edge terms to consume pairwise encodings; "
                "use gine for the edge-feature variant")
        if edge_feature_dim:
            warnings.warn("gin omits edge terms; use gine to consume "
                          "edge features")
    if cfg.backbone in ("gat", "gps_t") and cfg.hidden_dim % cfg.heads:
        raise InvalidCombo(
            f"hidden_dim {cfg.hidden_dim} not divisible by {cfg.heads} heads")


class Model:
    """Layer stack with a task readout; parameters live in self.store."""

    def __init__(self, cfg, feature_dim, edge_feature_dim, task, seed=0):
        validate_combo(cfg, edge_feature_dim)
        self.cfg = cfg
        self.feature_dim = int(feature_dim)
        self.edge_feature_dim = int(edge_feature_dim)
        self.task = task
        self.seed = int(seed)
        self.store = ad.ParamStore(seed=seed)
        self._graph_cache = {}

        h = cfg.hidden_dim
        pe_cfg = cfg.pe
        in_dim = self.feature_dim + (2 * pe_cfg.d if pe_cfg.mode == "npe" else 0)
        self.uses_epe = pe_cfg.mode == "epe" and cfg.backbone != "magnet"
        self.epe_nets = (EPENetworks(self.store, pe_cfg.m, pe_cfg.c)
                         if self.uses_epe else None)
        # gin never consumes edge terms; everything else sees raw features
        # plus the epe channels sliced per edge
        layer_edge_dim = self.edge_feature_dim + (pe_cfg.c if self.uses_epe else 0)
        if cfg.backbone == "gin":
            layer_edge_dim = 0

        self.layers = []
        self.bias_projs = []
        if cfg.backbone == "magnet":
            for i in range(cfg.num_layers):
                self.layers.append(MagNetLayer(
                    self.store, f"layer{i}", in_dim if i == 0 else h, h))
            head_in = 2 * h
        else:
            self.encode = ad.MLP(self.store, "encode", (in_dim, h))
            for i in range(cfg.num_layers):
                prefix = f"layer{i}"
                if cfg.backbone in ("gin", "gine"):
                    self.layers.append(GINLayer(self.store, prefix, h,
                                                cfg.direction, layer_edge_dim))
                elif cfg.backbone == "gcn":
                    self.layers.append(GCNLayer(self.store, prefix, h,
                                                cfg.direction, layer_edge_dim))
                elif cfg.backbone == "gat":
                    self.layers.append(GATLayer(self.store, prefix, h,
                                                cfg.direction, cfg.heads,
                                                layer_edge_dim))
                else:
                    self.layers.append(GPSLayer(self.store, prefix, h,
                                                cfg.direction, cfg.heads,
                                                layer_edge_dim))
                    if self.uses_epe:
                        self.bias_projs.append(self.store.weight(
                            f"{prefix}.bias_proj", (pe_cfg.c, cfg.heads)))
            head_in = h
        head_dims = (head_in,) + (h,) * (cfg.mlp_layers - 1) + (task.out_dim,)
        self.head = ad.MLP(self.store, "head", head_dims)

    @property
    def num_params(self):
        return self.store.num_values()

    # ---------------------------------------------------------- per graph

    def _prepared(self, g):
        """Constant per-graph context: branches, raw edge features, and for
        the spectral paths either the propagation matrix or the eigenbasis."""
        key = id(g)
        hit = self._graph_cache.get(key)
        if hit is not None and hit[0] is g:
            return hit[1]
        ctx = {}
        cfg = self.cfg
        if g.feature_dim != self.feature_dim:
            raise ShapeMismatch(
                f"graph features {g.feature_dim}, model expects {self.feature_dim}")
        if (g.edge_feature_dim or 0) != self.edge_feature_dim:
            raise ShapeMismatch(
                f"graph edge features {g.edge_feature_dim or 0}, "
                f"model expects {self.edge_feature_dim}")
        if cfg.backbone == "magnet":
            lap = magnetic_laplacian(g, cfg.pe.q)
            ctx["prop_re"] = ad.Tensor(np.eye(g.num_nodes) - lap.re)
            ctx["prop_im"] = ad.Tensor(-lap.im)
        else:
            ctx["branches"] = expand_direction(g, cfg.direction)
            use_raw = self.edge_feature_dim and cfg.backbone != "gin"
            raw = (branch_edge_features(g.edge_features, cfg.direction)
                   if use_raw else None)
            ctx["raw_edge"] = ([ad.Tensor(r) for r in raw]
                               if raw is not None else None)
        if cfg.pe.mode == "npe" or self.uses_epe:
            ctx["dec"] = compute_pe_basis(g, cfg.pe.q, cfg.pe.d)
            if cfg.pe.mode == "npe":
                ctx["npe_feats"] = np.hstack([g.node_features, npe(ctx["dec"])])
        self._graph_cache[key] = (g, ctx)
        return ctx

    def _branch_edge_feats(self, g, ctx, epe_tensor):
        if not self.uses_epe:
            return ctx["raw_edge"]
        feats = []
        for i, (edges, _) in enumerate(ctx["branches"]):
            sl = epe_slice_at(epe_tensor, edges, g.num_nodes)
            raw = ctx["raw_edge"]
            feats.append(sl if raw is None else ad.concat([raw[i], sl], axis=1))
        return feats

    # ------------------------------------------------------------ forward

    def forward(self, g, train=False, rng=None):
        """Predictions for one graph: [n x out] node-level, [1 x out] graph."""
        cfg = self.cfg
        ctx = self._prepared(g)
        rate = cfg.dropout if train else 0.0
        if rate > 0.0 and rng is None:
            raise InvalidSpec("training-mode dropout needs an rng")
        drop = (rate, rng) if rate > 0.0 else None
        if cfg.backbone == "magnet":
            x = self._spectral_stack(g, ctx, rate, rng)
        else:
            x = self._message_stack(g, ctx, drop)
        return readout(x, self.task, self.head, drop=drop)

    def _spectral_stack(self, g, ctx, rate, rng):
        feats = ctx["npe_feats"] if self.cfg.pe.mode == "npe" else g.node_features
        xr = ad.Tensor(feats)
        xi = ad.Tensor(np.zeros_like(feats))
        for layer in self.layers:
            xr, xi = layer.forward(ctx["prop_re"], ctx["prop_im"], xr, xi)
            if rate > 0.0:
                # one mask for both parts: drop whole complex units
                mask = (rng.random(xr.shape) >= rate) / (1.0 - rate)
                xr = ad.dropout(xr, mask)
                xi = ad.dropout(xi, mask)
        return ad.concat([xr, xi], axis=1)

    def _message_stack(self, g, ctx, drop):
        feats = ctx["npe_feats"] if self.cfg.pe.mode == "npe" else g.node_features
        x = self.encode(ad.Tensor(feats))
        epe_tensor = epe(ctx["dec"], self.epe_nets) if self.uses_epe else None
        edge_feats = (self._branch_edge_feats(g, ctx, epe_tensor)
                      if self.cfg.backbone != "gin" else None)
        for i, layer in enumerate(self.layers):
            if self.cfg.backbone == "gps_t":
                bias = (epe_attn_bias(epe_tensor, self.bias_projs[i])
                        if self.uses_epe else None)
                x = layer.forward(x, ctx["branches"], edge_feats, bias=bias,
                                  node_cap=self.cfg.gps_node_cap, drop=drop)
            else:
                x = ad.relu(layer.forward(x, ctx["branches"], edge_feats,
                                          drop=drop))
            if drop is not None:
                rate, rng = drop
                mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
                x = ad.dropout(x, mask)
        return x


def readout(x, task, head, drop=None):
    """Node tasks apply the head per node; graph tasks mean-pool first.
    Classification heads emit logits."""
    if task.level == "graph":
        x = ad.tensor_mean(x, axis=0, keepdims=True)
    return head(x, drop=drop)


def build_model(cfg, feature_dim, edge_feature_dim, task, seed=0):
    return Model(cfg, feature_dim, edge_feature_dim, task, seed=seed)


# -------------------------------------------------------------- config i/o

def config_to_dict(cfg):
    return {
        "backbone": cfg.backbone,
        "direction": {"mode": cfg.direction.mode, "combine": cfg.direction.combine},
        "hidden_dim": cfg.hidden_dim,
        "num_layers": cfg.num_layers,
        "mlp_layers": cfg.mlp_layers,
        "dropout": cfg.dropout,
        "heads": cfg.heads,
        "pe": {"mode": cfg.pe.mode, "q": cfg.pe.q, "d": cfg.pe.d,
               "m": cfg.pe.m, "c": cfg.pe.c},
        "cheb_k": cfg.cheb_k,
        "gps_node_cap": cfg.gps_node_cap,
    }


def config_from_dict(d):
    try:
        direction = DirectionMode(d["direction"]["mode"],
                                  d["direction"].get("combine"))
        pe_cfg = PEConfig(**d["pe"])
        return ModelConfig(
            backbone=d["backbone"], direction=direction,
            hidden_dim=int(d["hidden_dim"]), num_layers=int(d["num_layers"]),
            mlp_layers=int(d["mlp_layers"]), dropout=float(d["dropout"]),
            heads=int(d["heads"]), pe=pe_cfg, cheb_k=int(d["cheb_k"]),
            gps_node_cap=int(d["gps_node_cap"]))
    except KeyError as exc:
        raise SchemaError(f"model config missing {exc}") from exc


# -------------------------------------------------------------- checkpoint

def save_checkpoint(model, path, rng_state=None, extra=None):
    """JSON header line, then the parameter arrays as little-endian float64
    in header order."""
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model": config_to_dict(model.cfg),
        "task": task_to_dict(model.task),
        "feature_dim": model.feature_dim,
        "edge_feature_dim": model.edge_feature_dim,
        "seed": model.seed,
        "params": [{"name": name, "shape": list(t.shape)}
                   for name, t in model.store.items()],
        "rng_state": rng_state,
        "extra": extra,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for _, t in model.store.items():
            fh.write(np.ascontiguousarray(t.values, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild the model and restore its parameters; returns (model, header)."""
    with open(path, "rb") as fh:
        line = fh.readline()
        blob = fh.read()
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ParseError(f"not a model checkpoint: format={header.get('format')!r}")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {header.get('version')!r}")
    for key in ("model", "task", "feature_dim", "edge_feature_dim", "seed", "params"):
        if key not in header:
            raise SchemaError(f"checkpoint header missing '{key}'")
    cfg = config_from_dict(header["model"])
    task = task_from_dict(header["task"])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = Model(cfg, header["feature_dim"], header["edge_feature_dim"],
                      task, seed=header["seed"])
    names = [p["name"] for p in header["params"]]
    if names != model.store.names():
        raise SchemaError("checkpoint parameter list does not match the "
                          "rebuilt model")
    offset = 0
    for p in header["params"]:
        shape = tuple(p["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 8 if shape else 8
        chunk = blob[offset:offset + size]
        if len(chunk) != size:
            raise ParseError(f"checkpoint truncated at parameter {p['name']!r}")
        offset += size
        model.store.get(p["name"]).values[...] = np.frombuffer(
            chunk, dtype="<f8").reshape(shape)
    if offset != len(blob):
        raise ParseError(f"{len(blob) - offset} trailing bytes after parameters")
    return model, header
