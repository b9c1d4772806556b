"""Command line: ``tsc-export --dataset cora --out cora.json --seed 0``.

Also runs as ``python -m dataset_converter export ...`` (the leading
``export`` token is optional either way).
"""

from __future__ import annotations

import argparse
import sys

from .export import DATASETS, ExporterError, export


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsc-export",
        description="Export a benchmark graph dataset to portable JSON.",
    )
    parser.add_argument("--dataset", required=True, help=f"one of {sorted(DATASETS)}")
    parser.add_argument("--out", required=True, help="output JSON path")
    parser.add_argument("--seed", type=int, default=0, help="seed for generated splits")
    parser.add_argument("--cache-dir", default=None, help="download cache directory")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if argv and argv[0] == "export":
        argv = argv[1:]
    args = build_parser().parse_args(argv)
    try:
        manifest = export(args.dataset, args.out, seed=args.seed, cache_dir=args.cache_dir)
    except ExporterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(manifest.summary())
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
