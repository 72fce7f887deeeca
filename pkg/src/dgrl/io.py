"""JSONL dataset serialization.

One JSON object per line: a header carrying the task, then one record
per graph.  Floats are written with 17 significant digits so that
save(load(path)) reproduces a canonical file byte for byte.  Target
dtypes are decided by the task objective, never sniffed from the data.
"""

import json

import numpy as np

from .errors import (ConflictingTargets, InvalidSpec, ParseError, SchemaError,
                     SplitError)
from .graphs import Dataset, TaskSpec, build_graph, task_from_dict


def _fmt_float(x):
    x = float(x)
    if not np.isfinite(x):
        raise InvalidSpec(f"non-finite value {x!r} cannot be serialized")
    if x == 0.0:
        return "0"
    return "%.17g" % x


def _fmt_floats(vec):
    return "[" + ",".join(_fmt_float(v) for v in vec) + "]"


def _fmt_float_rows(mat):
    return "[" + ",".join(_fmt_floats(row) for row in mat) + "]"


def _fmt_int_rows(mat):
    return "[" + ",".join("[%d,%d]" % (r[0], r[1]) for r in mat) + "]"


def _record_line(g, task, split_tag=None, node_mask=None):
    parts = ['"num_nodes":%d' % g.num_nodes,
             '"edges":' + _fmt_int_rows(g.edges),
             '"x":' + _fmt_float_rows(g.node_features)]
    if g.edge_features is not None:
        parts.append('"edge_attr":' + _fmt_float_rows(g.edge_features))
    if task.level == "node":
        if g.node_targets is None:
            raise SchemaError("node-level task but graph lacks y_node")
        if task.objective == "classification":
            y = "[" + ",".join("%d" % v for v in g.node_targets) + "]"
        else:
            y = _fmt_float_rows(g.node_targets)
        parts.append('"y_node":' + y)
    else:
        if g.graph_target is None:
            raise SchemaError("graph-level task but graph lacks y_graph")
        if task.objective == "classification":
            y = "%d" % g.graph_target
        else:
            y = _fmt_floats(g.graph_target)
        parts.append('"y_graph":' + y)
    if split_tag is not None:
        parts.append('"split":' + json.dumps(split_tag))
    else:
        parts.append('"node_split":' + json.dumps(list(node_mask)))
    return "{" + ",".join(parts) + "}"


def _header_line(task):
    fields = ['"level":' + json.dumps(task.level),
              '"objective":' + json.dumps(task.objective)]
    if task.objective == "classification":
        fields.append('"num_classes":%d' % task.num_classes)
    else:
        fields.append('"dim":%d' % task.dim)
    fields.append('"metrics":' + json.dumps(list(task.metrics)))
    return '{"task":{' + ",".join(fields) + "}}"


def save_dataset(ds, path):
    lines = [_header_line(ds.task)]
    for i, g in enumerate(ds.graphs):
        tag = ds.split[i] if ds.split is not None else None
        mask = ds.node_split[i] if ds.node_split is not None else None
        lines.append(_record_line(g, ds.task, tag, mask))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_task(obj):
    if "task" not in obj:
        raise SchemaError("header missing 'task'")
    return task_from_dict(obj["task"])


def _parse_record(obj, task, lineno):
    for key in ("num_nodes", "edges", "x"):
        if key not in obj:
            raise SchemaError(f"line {lineno}: record missing '{key}'")
    if "y_node" in obj and "y_graph" in obj:
        raise ConflictingTargets(f"line {lineno}: both y_node and y_graph present")
    if "y_node" not in obj and "y_graph" not in obj:
        raise SchemaError(f"line {lineno}: record missing 'y_node'/'y_graph'")
    node_t = graph_t = None
    if "y_node" in obj:
        raw = obj["y_node"]
        node_t = (np.asarray(raw, dtype=np.int64)
                  if task.objective == "classification"
                  else np.asarray(raw, dtype=np.float64))
    else:
        raw = obj["y_graph"]
        graph_t = (int(raw) if task.objective == "classification"
                   else np.asarray(raw, dtype=np.float64))
    n = int(obj["num_nodes"])
    edges = np.asarray(obj["edges"], dtype=np.int64).reshape(-1, 2)
    x = np.asarray(obj["x"], dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(n, -1) if x.size else x.reshape(n, 0)
    edge_attr = None
    if "edge_attr" in obj:
        edge_attr = np.asarray(obj["edge_attr"], dtype=np.float64).reshape(edges.shape[0], -1)
    g = build_graph(n, edges, x, edge_features=edge_attr,
                    node_targets=node_t, graph_target=graph_t)
    if "split" in obj:
        return g, obj["split"], None
    if "node_split" in obj:
        return g, None, tuple(obj["node_split"])
    raise SplitError(f"line {lineno}: graph has no split tag")


def load_dataset(path):
    with open(path, encoding="ascii") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty dataset file")
    parsed = []
    for i, line in enumerate(lines, start=1):
        try:
            parsed.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ParseError(f"line {i}: {e.msg}") from e
    task = _parse_task(parsed[0])
    if len(parsed) < 2:
        raise SchemaError("dataset has a header but no graph records")
    graphs, tags, masks = [], [], []
    for i, obj in enumerate(parsed[1:], start=2):
        g, tag, mask = _parse_record(obj, task, i)
        graphs.append(g)
        tags.append(tag)
        masks.append(mask)
    per_graph = [t is not None for t in tags]
    if all(per_graph):
        return Dataset(tuple(graphs), task, split=tuple(tags))
    if any(per_graph):
        raise SplitError("records mix per-graph 'split' and per-node 'node_split'")
    return Dataset(tuple(graphs), task, node_split=tuple(masks))
