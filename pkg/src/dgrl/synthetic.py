"""Synthetic directed-graph datasets.

Two label rules at desk scale: longest directed path length (graph
regression, needs acyclic graphs) and transitive-triangle middle count
(node classification).  The OOD split reuses the generator with the
node range scaled by ood_factor, so OOD graphs are larger but follow
the same law.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .graphs import Dataset, TaskSpec, build_graph

LONGEST_PATH = "longest_path"
LOCAL_MOTIF_COUNT = "local_motif_count"


@dataclass(frozen=True)
class SyntheticSpec:
    num_graphs: int
    node_range: tuple          # (lo, hi) inclusive
    density: float = 0.3
    dag_only: bool = True
    label_rule: str = LONGEST_PATH
    num_classes: int = 4       # motif rule only
    ood_factor: float = 1.5


def task_for_rule(rule, num_classes=4):
    if rule == LONGEST_PATH:
        return TaskSpec("graph", "regression",
                        ("mse", "rmse", "r2", "acc5", "acc10"), dim=1)
    if rule == LOCAL_MOTIF_COUNT:
        return TaskSpec("node", "classification",
                        ("accuracy", "f1", "precision", "recall"),
                        num_classes=num_classes)
    raise InvalidSpec(f"unknown label rule {rule!r}")


def longest_path_length(num_nodes, edges):
    """Edge count of the longest directed path in an acyclic graph."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    indeg = np.bincount(edges[:, 1], minlength=num_nodes)
    out = [[] for _ in range(num_nodes)]
    for s, d in map(tuple, edges):
        out[s].append(d)
    queue = [v for v in range(num_nodes) if indeg[v] == 0]
    dist = np.zeros(num_nodes, dtype=np.int64)
    seen = 0
    while queue:
        v = queue.pop()
        seen += 1
        for w in out[v]:
            dist[w] = max(dist[w], dist[v] + 1)
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    if seen != num_nodes:
        raise InvalidSpec("longest path undefined: graph has a directed cycle")
    return int(dist.max()) if num_nodes else 0


def transitive_middle_counts(num_nodes, edges):
    """Per node m, the number of (u, w) pairs with u->m, m->w and u->w."""
    a = np.zeros((num_nodes, num_nodes))
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    a[edges[:, 0], edges[:, 1]] = 1.0
    return np.einsum("um,mw,uw->m", a, a, a).astype(np.int64)


def _sample_edges(rng, n, density, dag_only):
    if dag_only:
        perm = rng.permutation(n)
        r = rng.random((n, n))
        iu, ju = np.triu_indices(n, 1)
        keep = r[iu, ju] < density
        src, dst = perm[iu[keep]], perm[ju[keep]]
    else:
        r = rng.random((n, n))
        np.fill_diagonal(r, 1.0)
        src, dst = np.nonzero(r < density / 2.0)
    edges = np.stack([src, dst], axis=1).astype(np.int64)
    if edges.shape[0] == 0:
        # density contract guarantees at least one edge
        edges = (np.array([[perm[0], perm[1]]], dtype=np.int64) if dag_only
                 else np.array([[0, 1]], dtype=np.int64))
    return edges


def _make_graph(rng, n, spec):
    edges = _sample_edges(rng, n, spec.density, spec.dag_only)
    x = np.ones((n, 1))
    if spec.label_rule == LONGEST_PATH:
        y = float(longest_path_length(n, edges))
        return build_graph(n, edges, x, graph_target=np.array([y]))
    counts = transitive_middle_counts(n, edges)
    labels = np.minimum(counts, spec.num_classes - 1)
    return build_graph(n, edges, x, node_targets=labels)


def validate_spec(spec):
    if spec.num_graphs < 1:
        raise InvalidSpec("num_graphs must be >= 1")
    lo, hi = spec.node_range
    if lo < 2 or hi < lo:
        raise InvalidSpec(f"node_range ({lo}, {hi}) needs 2 <= lo <= hi")
    if not 0.0 < spec.density <= 1.0:
        raise InvalidSpec(f"density {spec.density} outside (0, 1]")
    if spec.label_rule not in (LONGEST_PATH, LOCAL_MOTIF_COUNT):
        raise InvalidSpec(f"unknown label rule {spec.label_rule!r}")
    if spec.label_rule == LONGEST_PATH and not spec.dag_only:
        raise InvalidSpec("longest_path labels need dag_only graphs")
    if spec.ood_factor < 1.0:
        raise InvalidSpec("ood_factor must be >= 1")


def generate_synthetic(spec, seed):
    """Deterministic dataset for (spec, seed); ~70/15/15 ID splits plus an
    OOD tail of larger graphs."""
    validate_spec(spec)
    lo, hi = spec.node_range
    rng = np.random.default_rng(seed)
    graphs = [_make_graph(rng, int(rng.integers(lo, hi + 1)), spec)
              for _ in range(spec.num_graphs)]
    ood_lo, ood_hi = math.ceil(lo * spec.ood_factor), math.ceil(hi * spec.ood_factor)
    num_ood = max(1, round(spec.num_graphs * 0.15))
    ood = [_make_graph(rng, int(rng.integers(ood_lo, ood_hi + 1)), spec)
           for _ in range(num_ood)]

    order = rng.permutation(spec.num_graphs)
    n_train = max(1, round(0.7 * spec.num_graphs))
    rem = spec.num_graphs - n_train
    n_val = rem // 2
    tags = np.empty(spec.num_graphs, dtype=object)
    tags[order[:n_train]] = "train"
    tags[order[n_train:n_train + n_val]] = "val"
    tags[order[n_train + n_val:]] = "test_id"
    split = tuple(tags) + ("test_ood",) * num_ood
    return Dataset(tuple(graphs + ood),
                   task_for_rule(spec.label_rule, spec.num_classes), split)
