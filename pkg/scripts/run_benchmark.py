#!/usr/bin/env python3
"""Full benchmark run: every method variant on one preset, 5 seeds.

Writes pretrain checkpoints, report.json, metrics.csv, and per-run
diagnostics under the output directory, then prints the aggregate table.

Usage:
    python3 scripts/run_benchmark.py --preset severe --out runs/severe --workers 4
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from driftadapt.config import AdaptConfig, ExperimentConfig, preset_benchmark
from driftadapt.harness import cmd_adapt, cmd_pretrain

VARIANTS = ["source", "norm", "st", "tent_em", "can", "scan", "scanner"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="severe",
                    choices=["mild", "severe", "collapse"])
    ap.add_argument("--out", default="runs/benchmark")
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()

    cfg = ExperimentConfig(
        benchmark=preset_benchmark(args.preset),
        adapt=AdaptConfig(),
        variants=VARIANTS,
        seeds=args.seeds,
        workers=args.workers,
        out_dir=args.out,
    )
    print(f"pretraining {len(args.seeds)} source models ({args.preset} preset)")
    summary = cmd_pretrain(cfg, args.out)
    for seed, row in summary["seeds"].items():
        print(f"  seed {seed}: holdout accuracy {row['holdout_accuracy']:.4f}")

    print(f"adapting {len(VARIANTS)} variants x {len(args.seeds)} seeds")
    doc = cmd_adapt(cfg, args.out, args.out)
    print(f"\n{'variant':<10} {'final macro-F1':>16} {'final accuracy':>16}")
    for variant in VARIANTS:
        agg = doc["aggregate"][variant]
        f1, acc = agg["final_macro_f1"], agg["final_accuracy"]
        print(f"{variant:<10} {f1['mean']:.4f} +/- {f1['std']:.4f} "
              f"  {acc['mean']:.4f} +/- {acc['std']:.4f}")
    print(f"\nreports written to {args.out}/")


if __name__ == "__main__":
    main()
