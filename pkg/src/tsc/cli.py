"""Command-line entry point.

Subcommands:
  tsc run     --config cfg.json [--seed N] [--output-dir D] [--force-exact]
  tsc sweep   --config cfg.json --axis depth --values 4,8,16,32
  tsc metrics --dataset data.json --orders 1,2,3
  tsc dump    --config cfg.json --layer K [--seed N]

The config file is JSON mirroring RunConfig field names, with the model
settings nested under "model" and an optional generator under "synthetic".
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import TscError
from .graph import build_adjacency, load_dataset
from .metrics import amo, andcnn
from .runner import (
    RunConfig,
    dump_embeddings,
    run_depth_sweep,
    run_param_sweep,
    run_single,
    write_json_atomic,
)

__all__ = ["main"]


def _parse_values(text: str, cast):
    return [cast(chunk) for chunk in text.split(",") if chunk.strip()]


def _load_config(args) -> RunConfig:
    config = RunConfig.from_json_file(args.config)
    if getattr(args, "output_dir", None):
        config.output_dir = args.output_dir
    if getattr(args, "force_exact", False):
        config.force_exact = True
    if getattr(args, "seed", None) is not None:
        config.seeds = [args.seed]
    return config


def _cmd_run(args) -> int:
    config = _load_config(args)
    os.makedirs(config.output_dir, exist_ok=True)
    reports = []
    for seed in config.seeds:
        report = run_single(
            config,
            seed,
            checkpoint_path=os.path.join(config.output_dir, f"params_seed{seed}.bin"),
        )
        reports.append(report.to_dict())
        print(f"seed {seed}: best test accuracy {report.best_accuracy:.4f}")
    summary = {
        "runs": reports,
        "mean_best_accuracy": float(np.mean([r["best_accuracy"] for r in reports])),
    }
    path = os.path.join(config.output_dir, "report.json")
    write_json_atomic(path, summary)
    print(f"wrote {path}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    if args.axis == "depth":
        depths = _parse_values(args.values, int)
        run_depth_sweep(config, depths)
    else:
        cast = float
        run_param_sweep(config, args.axis, _parse_values(args.values, cast))
    path = os.path.join(config.output_dir, "sweep.csv")
    print(f"wrote {path}")
    return 0


def _cmd_metrics(args) -> int:
    dataset = load_dataset(args.dataset)
    adjacency = build_adjacency(dataset)
    orders = _parse_values(args.orders, int)
    payload = {
        "dataset": args.dataset,
        "num_nodes": dataset.num_nodes,
        "num_edges": dataset.num_edges,
        "orders": orders,
        "amo": [amo(adjacency, k) for k in orders],
        "andcnn": [andcnn(adjacency, dataset.labels, k) for k in orders],
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    if args.output_dir:
        os.makedirs(args.output_dir, exist_ok=True)
        write_json_atomic(os.path.join(args.output_dir, "metrics.json"), payload)
    return 0


def _cmd_dump(args) -> int:
    config = _load_config(args)
    os.makedirs(config.output_dir, exist_ok=True)
    from .runner import load_or_generate

    dataset = load_or_generate(config)
    seed = config.seeds[0]
    report = run_single(config, seed, dataset=dataset)
    path = os.path.join(config.output_dir, f"embeddings_layer{args.layer}.csv")
    dump_embeddings(report._trace, dataset.labels, args.layer, path)
    report.embedding_files.append(path)
    write_json_atomic(os.path.join(config.output_dir, "report.json"), report.to_dict())
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsc",
        description="Train SGC/GCN models with the two-sided constraint and "
        "measure over-smoothing.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train per config and write report.json")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--output-dir", default=None)
    run.add_argument("--force-exact", action="store_true")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="sweep one axis and write sweep.csv")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--axis", required=True, choices=["depth", "lambda", "tau", "beta"])
    sweep.add_argument("--values", required=True)
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--output-dir", default=None)
    sweep.add_argument("--force-exact", action="store_true")
    sweep.set_defaults(func=_cmd_sweep)

    metrics = sub.add_parser("metrics", help="neighborhood metrics for a dataset file")
    metrics.add_argument("--dataset", required=True)
    metrics.add_argument("--orders", default="1,2,3")
    metrics.add_argument("--output-dir", default=None)
    metrics.set_defaults(func=_cmd_metrics)

    dump = sub.add_parser("dump", help="train, then dump one layer's embeddings")
    dump.add_argument("--config", required=True)
    dump.add_argument("--layer", type=int, required=True)
    dump.add_argument("--seed", type=int, default=None)
    dump.add_argument("--output-dir", default=None)
    dump.add_argument("--force-exact", action="store_true")
    dump.set_defaults(func=_cmd_dump)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except TscError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
