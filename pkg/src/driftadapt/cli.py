"""Command-line entry point.

Subcommands: pretrain, adapt, export-embeddings, selftest. Every failure
exits nonzero and prints one machine-readable line ``ERROR <code>: <text>``.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ExperimentConfig, preset_benchmark
from .errors import (
    CompatibilityError,
    ConfigError,
    ContractError,
    DivergenceError,
)
from .harness import cmd_adapt, cmd_export_embeddings, cmd_pretrain
from .selftest import run_selftest

_ERROR_CODES = {
    ConfigError: "config",
    ContractError: "contract",
    CompatibilityError: "compat",
    DivergenceError: "divergence",
    FileNotFoundError: "io",
    PermissionError: "io",
    OSError: "io",
}


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(Path(args.config).read_text())
    else:
        cfg = ExperimentConfig()
    if args.preset:
        cfg.benchmark = preset_benchmark(args.preset)
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="driftadapt",
        description="Test-time adaptation benchmark harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment config JSON file")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--preset", choices=["mild", "severe", "collapse"],
                       help="override the benchmark preset")

    p = sub.add_parser("pretrain", help="pretrain source models, one per seed")
    common(p)

    p = sub.add_parser("adapt", help="run adaptation for every (variant, seed)")
    common(p)
    p.add_argument("--checkpoints", default=None,
                   help="directory with pretrain checkpoints (default: --out)")
    p.add_argument("--workers", type=int, default=None,
                   help="parallel (variant, seed) runs")

    p = sub.add_parser("export-embeddings",
                       help="export mean encoder embeddings with domain tags")
    common(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint file")
    p.add_argument("--csv", default=None, help="output CSV path")

    sub.add_parser("selftest", help="run the fast invariant suites")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "selftest":
            results = run_selftest()
            for name, ok, detail in results:
                print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
            return 0 if all(ok for _, ok, _ in results) else 1
        cfg = _load_config(args)
        if args.command == "pretrain":
            summary = cmd_pretrain(cfg, args.out)
            for seed, row in summary["seeds"].items():
                print(f"seed {seed}: source holdout accuracy {row['holdout_accuracy']:.4f}")
        elif args.command == "adapt":
            ckpt_dir = args.checkpoints or args.out
            doc = cmd_adapt(cfg, ckpt_dir, args.out)
            for variant, metrics in sorted(doc["aggregate"].items()):
                f1 = metrics["online_macro_f1"]
                print(f"{variant}: macro-F1 {f1['mean']:.4f} +/- {f1['std']:.4f}")
        elif args.command == "export-embeddings":
            out_csv = args.csv or str(Path(args.out) / "embeddings.csv")
            Path(args.out).mkdir(parents=True, exist_ok=True)
            cmd_export_embeddings(cfg, args.checkpoint, out_csv)
            print(f"wrote {out_csv}")
        return 0
    except tuple(_ERROR_CODES) as exc:
        code = next(c for t, c in _ERROR_CODES.items() if isinstance(exc, t))
        print(f"ERROR {code}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
