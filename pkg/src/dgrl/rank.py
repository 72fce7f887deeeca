"""Cross-method ranking aggregation and result-table rendering.

Each (dataset, task, metric) column ranks the methods that report it.
Lower-better columns sort ascending and give ties the minimum rank of
the tied block; higher-better columns sort descending and give ties the
maximum rank.  The asymmetry is deliberate and kept exactly.  Methods
missing a column are excluded from it and from their own averaging
denominator.
"""

import csv
import io as _io
from dataclasses import dataclass

import numpy as np

from .errors import EmptyColumn, InvalidSpec
from .metrics import HIGHER_BETTER, LOWER_BETTER, METRIC_DIRECTIONS

MISSING_CELL = "- -"
TOP_K = 3


@dataclass(frozen=True)
class Entry:
    method: str
    dataset: str
    task: str
    metric: str
    direction: str
    mean: float
    std: float = 0.0

    def __post_init__(self):
        if self.direction not in (LOWER_BETTER, HIGHER_BETTER):
            raise InvalidSpec(f"unknown direction {self.direction!r}")


class ResultsTable:
    """Entries keyed by (method, dataset, task, metric), one value each."""

    def __init__(self, entries=()):
        self._entries = {}
        self._directions = {}
        for e in entries:
            self.add(e)

    def add(self, entry):
        key = (entry.method, entry.dataset, entry.task, entry.metric)
        if key in self._entries:
            raise InvalidSpec(f"duplicate entry for {key}")
        prev = self._directions.get(entry.metric)
        if prev is not None and prev != entry.direction:
            raise InvalidSpec(
                f"metric {entry.metric!r} has conflicting directions")
        self._directions[entry.metric] = entry.direction
        self._entries[key] = entry

    def entries(self):
        return list(self._entries.values())

    def methods(self):
        return sorted({e.method for e in self._entries.values()})

    def columns(self):
        """Sorted (dataset, task, metric) triples present in the table."""
        return sorted({(e.dataset, e.task, e.metric)
                       for e in self._entries.values()})

    def column_values(self, dataset, task, metric):
        out = {}
        for e in self._entries.values():
            if (e.dataset, e.task, e.metric) == (dataset, task, metric):
                out[e.method] = e.mean
        return out

    def get(self, method, dataset, task, metric):
        return self._entries.get((method, dataset, task, metric))

    def direction(self, metric):
        return self._directions[metric]

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        return (isinstance(other, ResultsTable)
                and self._entries == other._entries)


def from_records(records):
    """Build a table from training-protocol result records; the split tag
    is folded into the dataset label so ID and OOD rank independently."""
    table = ResultsTable()
    for rec in records:
        dataset = rec["dataset"]
        if rec.get("split"):
            dataset = f"{dataset}:{rec['split']}"
        direction = METRIC_DIRECTIONS.get(rec["metric"])
        if direction is None:
            raise InvalidSpec(f"metric {rec['metric']!r} has no direction")
        table.add(Entry(rec["method"], dataset, rec["task"], rec["metric"],
                        direction, float(rec["mean"]),
                        float(rec.get("std", 0.0))))
    return table


def rank_column(values, direction):
    """Ranks for one column given {method: value}.

    Lower-better: ascending order, tie rank = smallest position in the
    tied block.  Higher-better: descending order, tie rank = largest
    position in the tied block.
    """
    methods = sorted(values)
    vals = np.array([values[m] for m in methods], dtype=np.float64)
    sign = 1.0 if direction == LOWER_BETTER else -1.0
    order = np.argsort(sign * vals, kind="stable")
    ranks = np.empty(len(methods), dtype=np.int64)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and vals[order[j + 1]] == vals[order[i]]:
            j += 1
        block_rank = i + 1 if direction == LOWER_BETTER else j + 1
        for pos in range(i, j + 1):
            ranks[order[pos]] = block_rank
        i = j + 1
    return {m: int(r) for m, r in zip(methods, ranks)}


@dataclass(frozen=True)
class RankTable:
    column_ranks: dict          # (dataset, task, metric) -> {method: rank}
    avg_rank_task: dict         # (method, dataset, task) -> float
    avg_rank_dataset: dict      # (method, dataset) -> float
    methods: tuple
    datasets: tuple


def rank_table(results):
    """Rank every column and average per (method, task) and per
    (method, dataset) over the columns the method actually reports."""
    columns = results.columns()
    if not columns:
        raise EmptyColumn("results table has no columns")
    column_ranks = {}
    for dataset, task, metric in columns:
        values = results.column_values(dataset, task, metric)
        if len(values) < 2:
            raise EmptyColumn(
                f"column ({dataset}, {task}, {metric}) has "
                f"{len(values)} method(s); need at least 2")
        column_ranks[(dataset, task, metric)] = rank_column(
            values, results.direction(metric))

    task_acc, dataset_acc = {}, {}
    for (dataset, task, _metric), ranks in column_ranks.items():
        for method, r in ranks.items():
            task_acc.setdefault((method, dataset, task), []).append(r)
            dataset_acc.setdefault((method, dataset), []).append(r)
    return RankTable(
        column_ranks=column_ranks,
        avg_rank_task={k: float(np.mean(v)) for k, v in task_acc.items()},
        avg_rank_dataset={k: float(np.mean(v))
                          for k, v in dataset_acc.items()},
        methods=tuple(results.methods()),
        datasets=tuple(sorted({d for d, _, _ in columns})),
    )


def top_score(ranks, k=TOP_K):
    """Per method: datasets where its average rank places first, and
    within the top k.  Tied averages share a position."""
    counts = {m: {"first": 0, "topk": 0} for m in ranks.methods}
    for dataset in ranks.datasets:
        avgs = {m: ranks.avg_rank_dataset[(m, dataset)]
                for m in ranks.methods
                if (m, dataset) in ranks.avg_rank_dataset}
        for method, avg in avgs.items():
            position = 1 + sum(1 for v in avgs.values() if v < avg)
            if position == 1:
                counts[method]["first"] += 1
            if position <= k:
                counts[method]["topk"] += 1
    return counts


def _fmt_cell(entry):
    if entry is None:
        return MISSING_CELL
    return f"{entry.mean:.3f}±{entry.std:.3f}"


def render_results(results, fmt="markdown"):
    """Markdown grid (methods x columns) or long-form CSV that parses back
    to an equal table."""
    if fmt == "csv":
        buf = _io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["method", "dataset", "task", "metric", "direction",
                         "mean", "std"])
        for e in sorted(results.entries(),
                        key=lambda e: (e.method, e.dataset, e.task, e.metric)):
            writer.writerow([e.method, e.dataset, e.task, e.metric,
                             e.direction, f"{e.mean:.17g}", f"{e.std:.17g}"])
        return buf.getvalue()
    if fmt != "markdown":
        raise InvalidSpec(f"unknown format {fmt!r}")
    columns = results.columns()
    header = ["method"] + [f"{d}/{t}/{m}" for d, t, m in columns]
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    for method in results.methods():
        cells = [_fmt_cell(results.get(method, d, t, m))
                 for d, t, m in columns]
        lines.append("| " + " | ".join([method] + cells) + " |")
    return "\n".join(lines) + "\n"


def parse_results_csv(text):
    rows = list(csv.reader(_io.StringIO(text)))
    if not rows or rows[0] != ["method", "dataset", "task", "metric",
                               "direction", "mean", "std"]:
        raise InvalidSpec("unrecognized results CSV header")
    table = ResultsTable()
    for row in rows[1:]:
        if not row:
            continue
        method, dataset, task, metric, direction, mean, std = row
        table.add(Entry(method, dataset, task, metric, direction,
                        float(mean), float(std)))
    return table


def render_ranks(ranks, fmt="markdown", k=TOP_K):
    """Average rank per (method, dataset) plus first/top-k tallies."""
    scores = top_score(ranks, k)
    if fmt == "csv":
        buf = _io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["method"] + [f"avg_rank:{d}" for d in ranks.datasets]
                        + ["first", f"top{k}"])
        for method in ranks.methods:
            row = [method]
            for dataset in ranks.datasets:
                avg = ranks.avg_rank_dataset.get((method, dataset))
                row.append("" if avg is None else f"{avg:.17g}")
            row += [scores[method]["first"], scores[method]["topk"]]
            writer.writerow(row)
        return buf.getvalue()
    if fmt != "markdown":
        raise InvalidSpec(f"unknown format {fmt!r}")
    header = ["method"] + list(ranks.datasets) + ["first", f"top{k}"]
    lines = ["| " + " | ".join(header) + " |",
             "| " + " | ".join("---" for _ in header) + " |"]
    for method in ranks.methods:
        cells = []
        for dataset in ranks.datasets:
            avg = ranks.avg_rank_dataset.get((method, dataset))
            cells.append(MISSING_CELL if avg is None else f"{avg:.3f}")
        cells += [str(scores[method]["first"]), str(scores[method]["topk"])]
        lines.append("| " + " | ".join([method] + cells) + " |")
    return "\n".join(lines) + "\n"
