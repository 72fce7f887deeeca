"""Command-line entry points.

Subcommands: gen (synthetic dataset), pe (precompute the spectral cache),
train (single run), tune (hyperparameter search), protocol (multi-seed
aggregate), rank (cross-method rank tables).  Every artifact-producing
run writes a manifest.json holding the echoed config, the seeds, and
sha256 hashes of everything written, enough to reproduce the run.

Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 resource cap.
"""

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace

from .config import echo_config, parse_run_config, write_echo
from .errors import (AllTrialsFailed, ConfigError, ConvergenceFailure,
                     DegenerateTarget, DGRLError, NodeCapExceeded,
                     NotHermitian, NonScalarRoot)
from .io import load_dataset, save_dataset
from .metrics import LOWER_BETTER, METRIC_DIRECTIONS
from .model import build_model, method_name, save_checkpoint, validate_combo
from .pe import PECache
from .rank import from_records, rank_table, render_ranks
from .synthetic import generate_synthetic
from .train import evaluate, has_split, run_protocol, train, write_history
from .tune import SearchSpace, default_space, save_trials, tune

CACHE_ENV = "DGRL_CACHE"
_NUMERIC_ERRORS = (ConvergenceFailure, DegenerateTarget, NotHermitian,
                   NonScalarRoot, AllTrialsFailed)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def _write_manifest(out_dir, command, cfg, seeds, artifact_paths):
    manifest = {
        "command": command,
        "config": echo_config(cfg) if cfg is not None else None,
        "seeds": list(seeds),
        "artifacts": {os.path.relpath(p, out_dir): _sha256(p)
                      for p in artifact_paths},
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(args, cfg):
    out = args.out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    return out

def _echo_into(cfg, out):
    path = os.path.join(out, "config.yaml")
    write_echo(cfg, path)
    return path


def _load_run_dataset(cfg):
    if cfg.synthetic is not None:
        return generate_synthetic(cfg.synthetic, cfg.synthetic_seed)
    return load_dataset(cfg.dataset_path)


def _dataset_label(cfg):
    if cfg.synthetic is not None:
        return f"synthetic-{cfg.synthetic.label_rule}"
    return os.path.splitext(os.path.basename(cfg.dataset_path))[0]


def _dataset_dims(ds):
    feat = ds.graphs[0].node_features.shape[1]
    edge = next((g.edge_features.shape[1] for g in ds.graphs
                 if g.edge_features is not None), 0)
    return feat, edge


def _check_caps(cfg, ds):
    """Raise the resource-cap error up front instead of mid-epoch."""
    max_nodes = max(g.num_nodes for g in ds.graphs)
    if cfg.model.backbone == "gps_t" and max_nodes > cfg.gps_node_cap:
        raise NodeCapExceeded(
            f"dataset has a {max_nodes}-node graph, above "
            f"gps_node_cap={cfg.gps_node_cap}")
    if cfg.model.pe.mode != "none" and max_nodes > cfg.pe_node_cap:
        raise NodeCapExceeded(
            f"dataset has a {max_nodes}-node graph, above "
            f"pe_node_cap={cfg.pe_node_cap}")


# ------------------------------------------------------------- subcommands

def _cmd_gen(args):
    cfg = parse_run_config(args.config)
    if cfg.synthetic is None:
        raise ConfigError("dataset.synthetic: gen requires a synthetic spec")
    out = _out_dir(args, cfg)
    ds = generate_synthetic(cfg.synthetic, cfg.synthetic_seed)
    data_path = os.path.join(out, "dataset.jsonl")
    save_dataset(ds, data_path)
    echo = _echo_into(cfg, out)
    _write_manifest(out, "gen", cfg, [cfg.synthetic_seed], [data_path, echo])
    print(f"wrote {data_path} ({len(ds.graphs)} graphs)")
    return 0


def _cmd_pe(args):
    cfg = parse_run_config(args.config)
    out = _out_dir(args, cfg)
    cache_dir = args.out or os.environ.get(CACHE_ENV) \
        or os.path.join(cfg.output_dir, "pe_cache")
    ds = _load_run_dataset(cfg)
    cache = PECache(cache_dir)
    pe = cfg.model.pe
    for g in ds.graphs:
        cache.get_or_compute(g, pe.q, pe.d, node_cap=cfg.pe_node_cap)
    echo = _echo_into(cfg, out)
    _write_manifest(out, "pe", cfg, [], [echo])
    print(f"cached spectra for {len(ds.graphs)} graphs in {cache_dir}")
    return 0


def _cmd_train(args):
    cfg = parse_run_config(args.config)
    out = _out_dir(args, cfg)
    ds = _load_run_dataset(cfg)
    _check_caps(cfg, ds)
    feat, edge = _dataset_dims(ds)
    validate_combo(cfg.model, edge)
    model = build_model(cfg.model, feat, edge, ds.task, seed=cfg.train.seed)
    model, history = train(model, ds, cfg.train)

    paths = [_echo_into(cfg, out)]
    hist_path = os.path.join(out, "history.csv")
    write_history(history, hist_path)
    paths.append(hist_path)
    ckpt_path = os.path.join(out, "model.ckpt")
    save_checkpoint(model, ckpt_path)
    paths.append(ckpt_path)

    results = {}
    for tag in ("test_id", "test_ood"):
        if has_split(ds, tag):
            results[tag] = evaluate(model, ds, tag)
    metrics_path = os.path.join(out, "metrics.json")
    with open(metrics_path, "w") as fh:
        json.dump(results, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(metrics_path)
    _write_manifest(out, "train", cfg, [cfg.train.seed], paths)
    for tag, vals in results.items():
        parts = ", ".join(f"{k}={v:.4f}" for k, v in vals.items())
        print(f"{method_name(cfg.model)} {tag}: {parts}")
    return 0


def _apply_trial(cfg, trial_cfg):
    """Map a sampled config onto the model/train configs."""
    model = cfg.model
    pe = model.pe
    if "q" in trial_cfg:
        pe = replace(pe, q=float(trial_cfg["q"]))
    heads = model.heads
    if "hidden_dim" in trial_cfg and model.backbone in ("gat", "gps_t"):
        # keep the head split exact for attention backbones
        trial_cfg = dict(trial_cfg)
        trial_cfg["hidden_dim"] = (trial_cfg["hidden_dim"] // heads) * heads
    model = replace(
        model, pe=pe,
        hidden_dim=int(trial_cfg.get("hidden_dim", model.hidden_dim)),
        num_layers=int(trial_cfg.get("num_layers", model.num_layers)),
        mlp_layers=int(trial_cfg.get("mlp_layers", model.mlp_layers)),
        dropout=float(trial_cfg.get("dropout", model.dropout)))
    train_cfg = replace(
        cfg.train,
        batch_size=int(trial_cfg.get("batch_size", cfg.train.batch_size)),
        lr=float(trial_cfg.get("lr", cfg.train.lr)))
    return model, train_cfg


def _cmd_tune(args):
    cfg = parse_run_config(args.config)
    out = _out_dir(args, cfg)
    ds = _load_run_dataset(cfg)
    _check_caps(cfg, ds)
    feat, edge = _dataset_dims(ds)
    validate_combo(cfg.model, edge)

    space = default_space(cfg.model.backbone,
                          pe_active=cfg.model.pe.mode != "none")
    dims = dict(space.dims)
    dims.update(dict(cfg.space))
    space = SearchSpace(dims)

    primary = ds.task.metrics[0]
    direction = ("minimize" if METRIC_DIRECTIONS[primary] == LOWER_BETTER
                 else "maximize")

    def objective(trial_cfg):
        model_cfg, train_cfg = _apply_trial(cfg, trial_cfg)
        model = build_model(model_cfg, feat, edge, ds.task,
                            seed=train_cfg.seed)
        model, _ = train(model, ds, train_cfg)
        return evaluate(model, ds, "val", metrics=(primary,))[primary]

    best, history = tune(space, objective, budget=cfg.tune_budget,
                         seed=cfg.tune_seed, direction=direction,
                         jobs=args.jobs)
    paths = [_echo_into(cfg, out)]
    trials_path = os.path.join(out, "trials.jsonl")
    save_trials(history, trials_path)
    paths.append(trials_path)
    best_path = os.path.join(out, "best.json")
    with open(best_path, "w") as fh:
        json.dump({"trial_id": best.trial_id, "config": best.config,
                   "objective": best.objective, "metric": primary,
                   "direction": direction}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(best_path)
    _write_manifest(out, "tune", cfg, [cfg.tune_seed], paths)
    print(f"best trial {best.trial_id}: {primary}={best.objective:.6f}")
    return 0


def _cmd_protocol(args):
    cfg = parse_run_config(args.config)
    out = _out_dir(args, cfg)
    ds = _load_run_dataset(cfg)
    _check_caps(cfg, ds)
    feat, edge = _dataset_dims(ds)
    validate_combo(cfg.model, edge)
    records = run_protocol(cfg.model, ds, seeds=cfg.seeds,
                           train_cfg=cfg.train,
                           dataset_name=_dataset_label(cfg))
    paths = [_echo_into(cfg, out)]
    results_path = os.path.join(out, "results.json")
    with open(results_path, "w") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths.append(results_path)
    _write_manifest(out, "protocol", cfg, cfg.seeds, paths)
    print(f"wrote {len(records)} records to {results_path}")
    return 0


def _cmd_rank(args):
    records = []
    for path in args.results:
        try:
            with open(path) as fh:
                chunk = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"results file {path}: {exc}") from exc
        if not isinstance(chunk, list):
            raise ConfigError(f"results file {path}: expected a JSON list")
        records.extend(chunk)
    table = from_records(records)
    text = render_ranks(rank_table(table), args.format)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        ext = "md" if args.format == "markdown" else "csv"
        rank_path = os.path.join(args.out, f"rank.{ext}")
        with open(rank_path, "w") as fh:
            fh.write(text)
        _write_manifest(args.out, "rank", None, [], [rank_path])
        print(f"wrote {rank_path}")
    else:
        sys.stdout.write(text)
    return 0


# ------------------------------------------------------------------ parser

def _parser():
    parser = argparse.ArgumentParser(
        prog="dgrl",
        description="Directed-graph representation learning toolbox")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text, config_required=True):
        p = sub.add_parser(name, help=help_text)
        if config_required:
            p.add_argument("--config", required=True,
                           help="run configuration YAML")
        p.add_argument("--out", default="",
                       help="output directory (default: config output_dir)")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallelism across independent trials")
        p.set_defaults(fn=fn)
        return p

    add("gen", _cmd_gen, "generate a synthetic dataset")
    add("pe", _cmd_pe, "precompute the positional-encoding spectral cache")
    add("train", _cmd_train, "train a single configuration")
    add("tune", _cmd_tune, "hyperparameter search over the config's space")
    add("protocol", _cmd_protocol, "multi-seed training protocol")

    p_rank = sub.add_parser("rank", help="rank methods across result files")
    p_rank.add_argument("results", nargs="+",
                        help="results.json files from protocol runs")
    p_rank.add_argument("--format", choices=("markdown", "csv"),
                        default="markdown")
    p_rank.add_argument("--out", default="")
    p_rank.set_defaults(fn=_cmd_rank)
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        return args.fn(args)
    except NodeCapExceeded as exc:
        print(f"dgrl {args.command}: resource cap: {exc}", file=sys.stderr)
        return 4
    except _NUMERIC_ERRORS as exc:
        print(f"dgrl {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 3
    except DGRLError as exc:
        print(f"dgrl {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
