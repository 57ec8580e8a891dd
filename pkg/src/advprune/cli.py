"""Command line entry points.

  advprune train --config cfg.txt [--seed N] [--out DIR]
  advprune eval --checkpoint best.ckpt --attack "ifgsm:eps=0.1,alpha=0.025,steps=20" --data spec
  advprune histogram --checkpoint best.ckpt --out weights.svg [--bins lo:hi:count]
  advprune compare run_a.csv run_b.csv [--out table.csv]

Exit codes: 0 success, 2 validation/usage error, 3 I/O error. The
ADVPRUNE_OUT environment variable sets the default output root for train.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .config import parse_attack_string, parse_config, with_overrides
from .data import load_csv, make_blobs, make_spirals, make_tiny_images
from .errors import AdvpruneError
from .harness import compare_runs, emit_histogram_svg, run_experiment
from .metrics import accuracy, channel_sparsity, sparsity


def _parse_data_string(text: str):
    """'blobs:n=60,classes=2,dim=2,spread=0.1,seed=0' or a CSV path."""
    family, sep, rest = text.partition(":")
    if not sep or family not in ("blobs", "spirals", "tiny_images"):
        return load_csv(text)
    opts = {}
    for item in rest.split(","):
        key, _, value = item.partition("=")
        opts[key] = value
    if family == "blobs":
        return make_blobs(int(opts.get("n", 60)), int(opts.get("classes", 2)),
                          int(opts.get("dim", 2)), float(opts.get("spread", 0.1)),
                          int(opts.get("seed", 0)))
    if family == "spirals":
        return make_spirals(int(opts.get("n", 60)), float(opts.get("turns", 1.5)),
                            float(opts.get("noise", 0.02)), int(opts.get("seed", 0)))
    return make_tiny_images(int(opts.get("n", 20)), int(opts.get("classes", 2)),
                            int(opts.get("h", 8)), int(opts.get("w", 8)),
                            int(opts.get("seed", 0)))


def _cmd_train(args) -> int:
    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text, where=args.config)
    out_root = os.environ.get("ADVPRUNE_OUT")
    out_dir = args.out
    if out_dir is None and out_root is not None:
        out_dir = str(Path(out_root) / cfg.out_dir)
    cfg = with_overrides(cfg, seed=args.seed, out_dir=None)
    result = run_experiment(cfg, out_dir=out_dir)
    test_row = result.rows[-1]
    print(f"wrote {result.csv_path}")
    print(
        f"best epoch {result.best_epoch}: test a1={test_row.a1:.2f} a2={test_row.a2:.2f} "
        f"a3={test_row.a3:.2f} sparsity={test_row.sparsity:.2f} "
        f"channel_sparsity={test_row.channel_sparsity:.2f}"
    )
    return 0


def _cmd_eval(args) -> int:
    model, _state = load_checkpoint(args.checkpoint)
    dataset = _parse_data_string(args.data)
    spec = parse_attack_string(args.attack)
    acc = accuracy(model, dataset, spec, seed=args.seed)
    print(f"accuracy={acc!r}")
    print(f"sparsity={sparsity(model)!r}")
    print(f"channel_sparsity={channel_sparsity(model)!r}")
    return 0


def _cmd_histogram(args) -> int:
    model, _state = load_checkpoint(args.checkpoint)
    lo, hi, count = args.bins.split(":")
    edges = np.linspace(float(lo), float(hi), int(count) + 1)
    emit_histogram_svg(model, args.out, edges)
    print(f"wrote {args.out}")
    return 0


def _cmd_compare(args) -> int:
    result = compare_runs(args.csvs)
    sys.stdout.write(result.text)
    if args.out:
        Path(args.out).write_text(result.csv, encoding="utf-8")
        print(f"wrote {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advprune", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint under an attack")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--attack", default="none")
    p.add_argument("--data", required=True,
                   help="csv path or generator spec like blobs:n=60,classes=2,dim=2,spread=0.1,seed=0")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("histogram", help="emit a weight histogram SVG")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", default="-0.5:0.5:100", help="lo:hi:count")
    p.set_defaults(fn=_cmd_histogram)

    p = sub.add_parser("compare", help="align best rows of several result CSVs")
    p.add_argument("csvs", nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=_cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except AdvpruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
