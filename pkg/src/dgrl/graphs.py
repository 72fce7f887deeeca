"""Directed-graph and dataset data model.

Graphs are immutable after construction: arrays are stored with the
writeable flag cleared, and edge order is preserved exactly as given
(it is observable through serialization).
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import (ConflictingTargets, IndexOutOfRange, InvalidSpec,
                     SchemaError, ShapeMismatch, SplitError)
from .metrics import CLASSIFICATION_METRICS, METRIC_DIRECTIONS, REGRESSION_METRICS

SPLITS = ("train", "val", "test_id", "test_ood")


@dataclass(frozen=True)
class TaskSpec:
    level: str                 # node | graph
    objective: str             # regression | classification
    metrics: tuple
    dim: int = 0               # regression target width
    num_classes: int = 0

    def __post_init__(self):
        if self.level not in ("node", "graph"):
            raise InvalidSpec(f"task level must be node or graph, got {self.level!r}")
        if self.objective == "regression":
            if self.dim < 1:
                raise InvalidSpec("regression task needs dim >= 1")
            allowed = REGRESSION_METRICS
        elif self.objective == "classification":
            if self.num_classes < 2:
                raise InvalidSpec("classification task needs num_classes >= 2")
            allowed = CLASSIFICATION_METRICS
        else:
            raise InvalidSpec(f"unknown objective {self.objective!r}")
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if not self.metrics:
            raise InvalidSpec("task needs at least one metric")
        for m in self.metrics:
            if m not in METRIC_DIRECTIONS:
                raise InvalidSpec(f"unknown metric {m!r}")
            if m not in allowed:
                raise InvalidSpec(f"metric {m!r} does not apply to {self.objective}")

    @property
    def out_dim(self):
        return self.dim if self.objective == "regression" else self.num_classes


def task_to_dict(task):
    d = {"level": task.level, "objective": task.objective,
         "metrics": list(task.metrics)}
    if task.objective == "classification":
        d["num_classes"] = task.num_classes
    else:
        d["dim"] = task.dim
    return d


def task_from_dict(t):
    for key in ("level", "objective", "metrics"):
        if key not in t:
            raise SchemaError(f"task header missing '{key}'")
    if t["objective"] == "classification":
        if "num_classes" not in t:
            raise SchemaError("task header missing 'num_classes'")
        return TaskSpec(t["level"], t["objective"], tuple(t["metrics"]),
                        num_classes=int(t["num_classes"]))
    if "dim" not in t:
        raise SchemaError("task header missing 'dim'")
    return TaskSpec(t["level"], t["objective"], tuple(t["metrics"]),
                    dim=int(t["dim"]))


def _freeze(arr):
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DirectedGraph:
    num_nodes: int
    edges: np.ndarray                       # int64 [m, 2], rows are (src, dst)
    node_features: np.ndarray               # float64 [n, F_n]
    edge_features: Optional[np.ndarray] = None
    node_targets: Optional[np.ndarray] = None
    graph_target: object = None             # float64 [T] or int class index

    @property
    def num_edges(self):
        return self.edges.shape[0]

    @property
    def feature_dim(self):
        return self.node_features.shape[1]

    @property
    def edge_feature_dim(self):
        return 0 if self.edge_features is None else self.edge_features.shape[1]


def build_graph(num_nodes, edges, node_features, edge_features=None,
                node_targets=None, graph_target=None, allow_self_loops=False):
    """Validate and freeze a DirectedGraph; edges keep their input order."""
    if num_nodes < 1:
        raise InvalidSpec(f"num_nodes must be >= 1, got {num_nodes}")
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= num_nodes):
        bad = e[(e < 0).any(axis=1) | (e >= num_nodes).any(axis=1)][0]
        raise IndexOutOfRange(
            f"edge ({bad[0]}, {bad[1]}) outside [0, {num_nodes})")
    if not allow_self_loops and e.size and (e[:, 0] == e[:, 1]).any():
        v = int(e[e[:, 0] == e[:, 1]][0, 0])
        raise InvalidSpec(f"self-loop at node {v} (allow_self_loops not set)")
    seen = set()
    for s, d in map(tuple, e):
        if (s, d) in seen:
            raise InvalidSpec(f"parallel duplicate edge ({s}, {d})")
        seen.add((s, d))
    x = np.asarray(node_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != num_nodes:
        raise ShapeMismatch(
            f"node_features {x.shape} does not match {num_nodes} nodes")
    if edge_features is not None:
        edge_features = np.asarray(edge_features, dtype=np.float64)
        if edge_features.ndim != 2 or edge_features.shape[0] != e.shape[0]:
            raise ShapeMismatch(
                f"edge_features {edge_features.shape} does not match {e.shape[0]} edges")
        edge_features = _freeze(edge_features.copy())
    if node_targets is not None and graph_target is not None:
        raise ConflictingTargets("graph carries both node and graph targets")
    if node_targets is not None:
        node_targets = np.asarray(node_targets)
        if np.issubdtype(node_targets.dtype, np.integer):
            node_targets = node_targets.astype(np.int64).reshape(-1)
        else:
            node_targets = node_targets.astype(np.float64)
            if node_targets.ndim == 1:
                node_targets = node_targets.reshape(-1, 1)
        if node_targets.shape[0] != num_nodes:
            raise ShapeMismatch(
                f"node_targets has {node_targets.shape[0]} rows for {num_nodes} nodes")
        node_targets = _freeze(node_targets.copy())
    if graph_target is not None:
        if isinstance(graph_target, (int, np.integer)):
            graph_target = int(graph_target)
        else:
            graph_target = _freeze(
                np.asarray(graph_target, dtype=np.float64).reshape(-1).copy())
    return DirectedGraph(int(num_nodes), _freeze(e.copy()), _freeze(x.copy()),
                         edge_features, node_targets, graph_target)


def degree_total(g):
    """In-degree plus out-degree per node; a reciprocal pair adds 2 to each end."""
    out = np.bincount(g.edges[:, 0], minlength=g.num_nodes)
    inc = np.bincount(g.edges[:, 1], minlength=g.num_nodes)
    return (out + inc).astype(np.int64)


def reverse_edges(g):
    """Flip every edge; edge feature rows travel with their edge."""
    return replace(g, edges=_freeze(g.edges[:, ::-1].copy()))


@dataclass(frozen=True)
class Dataset:
    """Graphs with a task and either per-graph split tags or per-node masks."""

    graphs: tuple
    task: TaskSpec
    split: Optional[tuple] = None           # per-graph tag
    node_split: Optional[tuple] = None      # per-graph array of per-node tags

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if not self.graphs:
            raise InvalidSpec("dataset has no graphs")
        if (self.split is None) == (self.node_split is None):
            raise SplitError("dataset needs exactly one of split / node_split")
        if self.split is not None:
            object.__setattr__(self, "split", tuple(self.split))
            if len(self.split) != len(self.graphs):
                raise SplitError(
                    f"{len(self.split)} split tags for {len(self.graphs)} graphs")
            for tag in self.split:
                if tag not in SPLITS:
                    raise SplitError(f"unknown split tag {tag!r}")
            if "train" not in self.split:
                raise SplitError("train split is empty")
        else:
            if self.task.level != "node":
                raise SplitError("node_split only applies to node-level tasks")
            object.__setattr__(self, "node_split", tuple(self.node_split))
            if len(self.node_split) != len(self.graphs):
                raise SplitError(
                    f"{len(self.node_split)} node masks for {len(self.graphs)} graphs")
            any_train = False
            for g, mask in zip(self.graphs, self.node_split):
                mask = np.asarray(mask)
                if mask.shape != (g.num_nodes,):
                    raise SplitError(
                        f"node mask {mask.shape} for graph with {g.num_nodes} nodes")
                for tag in mask:
                    if tag not in SPLITS:
                        raise SplitError(f"unknown split tag {tag!r}")
                any_train = any_train or ("train" in mask)
            if not any_train:
                raise SplitError("train split is empty")

    def graphs_in(self, tag):
        """Graphs under a per-graph tag (per-graph split mode only)."""
        if self.split is None:
            raise SplitError("dataset uses per-node masks, not per-graph tags")
        return [g for g, t in zip(self.graphs, self.split) if t == tag]
