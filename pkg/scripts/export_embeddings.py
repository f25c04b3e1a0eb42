#!/usr/bin/env python3
"""Export per-sample mean encoder embeddings with domain tags, for external
projection tools (UMAP, t-SNE, PCA).

Usage:
    python3 scripts/export_embeddings.py --preset severe --out runs/embed
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from driftadapt.config import AdaptConfig, ExperimentConfig, preset_benchmark
from driftadapt.harness import checkpoint_path, cmd_export_embeddings, cmd_pretrain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--preset", default="severe",
                    choices=["mild", "severe", "collapse"])
    ap.add_argument("--out", default="runs/embed")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    cfg = ExperimentConfig(
        benchmark=preset_benchmark(args.preset),
        adapt=AdaptConfig(),
        seeds=[args.seed],
        out_dir=args.out,
    )
    ckpt = checkpoint_path(args.out, args.seed)
    if not ckpt.exists():
        cmd_pretrain(cfg, args.out)
    out_csv = Path(args.out) / "embeddings.csv"
    cmd_export_embeddings(cfg, ckpt, out_csv, seed=args.seed)
    print(f"wrote {out_csv}")


if __name__ == "__main__":
    main()
