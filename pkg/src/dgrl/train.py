"""Mini-batch training with best-validation checkpointing, split
evaluation, and the seeded multi-run protocol.

Batches concatenate per-graph predictions before the loss, which is
exactly the block-diagonal batched-adjacency semantics.  Node-level
datasets with per-node masks take full-graph steps and restrict the loss
to that graph's training rows.  Everything is single-threaded and
deterministic for a fixed seed.
"""

import csv
import time
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import InvalidSpec, SplitError
from .metrics import LOWER_BETTER, METRIC_DIRECTIONS, compute_metrics, loss
from .model import build_model, method_name

BATCH_SIZE_CANDIDATES = (32, 64, 128, 256, 512, 1024)
DEFAULT_SEEDS = tuple(range(10))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr: float = 1e-3
    epochs_max: int = 1000
    patience: int = 50
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.batch_size not in BATCH_SIZE_CANDIDATES:
            raise InvalidSpec(
                f"batch_size {self.batch_size} not in {BATCH_SIZE_CANDIDATES}")
        if self.lr <= 0.0:
            raise InvalidSpec("lr must be > 0")
        if self.epochs_max < 1:
            raise InvalidSpec("epochs_max must be >= 1")
        if self.patience < 0:
            raise InvalidSpec("patience must be >= 0")


def has_split(dataset, tag):
    if dataset.split is not None:
        return tag in dataset.split
    return any(tag in np.asarray(mask) for mask in dataset.node_split)


def _units(dataset, tag):
    """(graph, row indices or None) pairs holding the tag's targets."""
    if dataset.split is not None:
        return [(g, None) for g, t in zip(dataset.graphs, dataset.split)
                if t == tag]
    units = []
    for g, mask in zip(dataset.graphs, dataset.node_split):
        rows = np.flatnonzero(np.asarray(mask) == tag)
        if rows.size:
            units.append((g, rows))
    return units


def _unit_pairs(model, units, task, train=False, rng=None):
    """Concatenated predictions tensor and target array over units."""
    preds, targets = [], []
    for g, rows in units:
        out = model.forward(g, train=train, rng=rng)
        if task.level == "graph":
            targets.append(np.asarray(g.graph_target).reshape(1, -1)
                           if task.objective == "regression"
                           else np.asarray([g.graph_target]))
            preds.append(out)
        else:
            if rows is not None:
                out = ad.gather(out, rows)
                targets.append(g.node_targets[rows])
            else:
                targets.append(g.node_targets)
            preds.append(out)
    pred = preds[0] if len(preds) == 1 else ad.concat(preds, axis=0)
    return pred, np.concatenate(targets, axis=0)


def evaluate(model, dataset, tag, metrics=None):
    """Metric set over one split; SplitError when the split is empty.

    ``metrics`` restricts the computed names (training only ever needs the
    selection metric on the validation split)."""
    units = _units(dataset, tag)
    if not units:
        raise SplitError(f"split {tag!r} is empty")
    task = dataset.task
    if metrics is not None:
        task = replace(task, metrics=tuple(metrics))
    preds, targets = _unit_pairs(model, units, task)
    return compute_metrics(preds.values, targets, task)


def train(model, dataset, cfg):
    """Adam with per-epoch validation; returns (model at its best
    validation epoch, history rows).

    The selection metric is the first listed in the task; patience counts
    epochs without strict improvement, so patience 0 stops exactly one
    epoch past the best.
    """
    task = dataset.task
    train_units = _units(dataset, "train")
    if not train_units or not has_split(dataset, "val"):
        raise SplitError("train and val splits must be non-empty")
    primary = task.metrics[0]
    lower_better = METRIC_DIRECTIONS[primary] == LOWER_BETTER
    rng = np.random.default_rng(cfg.seed)
    opt = ad.Adam(model.store, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                  eps=cfg.eps)
    best_val = None
    best_state = model.store.state_dict()
    bad_epochs = 0
    history = []
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs_max):
        order = rng.permutation(len(train_units))
        loss_sum = 0.0
        row_count = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_units[i] for i in order[start:start + cfg.batch_size]]
            model.store.zero_grad()
            preds, targets = _unit_pairs(model, batch, task, train=True, rng=rng)
            batch_loss = loss(preds, targets, task)
            ad.backward(batch_loss)
            opt.step()
            n = len(targets)
            loss_sum += float(batch_loss.values) * n
            row_count += n
        val_value = evaluate(model, dataset, "val", metrics=(primary,))[primary]
        history.append({
            "epoch": epoch,
            "train_loss": loss_sum / row_count,
            "val_metric": float(val_value),
            "elapsed_s": time.perf_counter() - t0,
        })
        improved = best_val is None or (val_value < best_val if lower_better
                                        else val_value > best_val)
        if improved:
            best_val = val_value
            best_state = model.store.state_dict()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
    model.store.load_state_dict(best_state)
    return model, history


def write_history(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_metric", "elapsed_s"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["train_loss"]),
                             repr(row["val_metric"]), repr(row["elapsed_s"])])


def format_mean_std(mean, std):
    return f"{mean:.3f}±{std:.3f}"


def aggregate(values):
    """Mean and sample standard deviation; one value has std 0 by convention."""
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def run_protocol(model_cfg, dataset, seeds=DEFAULT_SEEDS, train_cfg=None,
                 dataset_name=""):
    """Train and test once per seed; aggregate per metric and per test split.

    Returns records {method, dataset, task, split, metric, mean, std,
    seeds, values} ready for ranking or JSON dumping.
    """
    seeds = tuple(seeds)
    if not seeds:
        raise InvalidSpec("seeds must be non-empty")
    if train_cfg is None:
        train_cfg = TrainConfig()
    task = dataset.task
    feature_dim = dataset.graphs[0].feature_dim
    edge_dim = dataset.graphs[0].edge_feature_dim or 0
    test_tags = [t for t in ("test_id", "test_ood") if has_split(dataset, t)]
    if not test_tags:
        raise SplitError("no test splits present")
    collected = {tag: {} for tag in test_tags}
    for seed in seeds:
        model = build_model(model_cfg, feature_dim, edge_dim, task, seed=seed)
        model, _ = train(model, dataset, replace(train_cfg, seed=seed))
        for tag in test_tags:
            for name, value in evaluate(model, dataset, tag).items():
                collected[tag].setdefault(name, []).append(float(value))
    records = []
    for tag in test_tags:
        for name in task.metrics:
            values = collected[tag][name]
            mean, std = aggregate(values)
            records.append({
                "method": method_name(model_cfg),
                "dataset": dataset_name,
                "task": f"{task.level}-{task.objective}",
                "split": tag,
                "metric": name,
                "mean": mean,
                "std": std,
                "seeds": list(seeds),
                "values": values,
            })
    return records
