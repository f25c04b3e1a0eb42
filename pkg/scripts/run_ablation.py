#!/usr/bin/env python3
"""Ablation over the objective terms: plain alignment, adaptive weighting,
and the diversity regularizer, against the unadapted source model.

Usage:
    python3 scripts/run_ablation.py --preset severe --out runs/ablation
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from driftadapt.config import AdaptConfig, ExperimentConfig, preset_benchmark
from driftadapt.harness import cmd_adapt, cmd_pretrain

ABLATION = ["source", "can", "scan", "scanner"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="severe",
                    choices=["mild", "severe", "collapse"])
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--workers", type=int, default=4)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = ap.parse_args()

    cfg = ExperimentConfig(
        benchmark=preset_benchmark(args.preset),
        adapt=AdaptConfig(),
        variants=ABLATION,
        seeds=args.seeds,
        workers=args.workers,
        out_dir=args.out,
    )
    cmd_pretrain(cfg, args.out)
    doc = cmd_adapt(cfg, args.out, args.out)

    rows = {
        "source": "no adaptation",
        "can": "+ centroid alignment",
        "scan": "+ sample-adaptive weights",
        "scanner": "+ diversity regularizer",
    }
    print(f"\n{'variant':<10} {'':<28} {'final macro-F1':>16}")
    for variant, label in rows.items():
        f1 = doc["aggregate"][variant]["final_macro_f1"]
        print(f"{variant:<10} {label:<28} {f1['mean']:.4f} +/- {f1['std']:.4f}")


if __name__ == "__main__":
    main()
