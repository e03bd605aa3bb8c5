#!/usr/bin/env python3
"""End-to-end wideband experiment: data, VAE training, and the SNR sweep CSV."""

import argparse
from pathlib import Path

from chanest.harness import pipeline
from chanest.harness.config import load_config

REPO = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=REPO / "configs" / "wideband_desk.toml")
    ap.add_argument("--profile", choices=("desk", "paper"), default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()
    cfg = load_config(args.config, profile=args.profile, seed=args.seed,
                      out_dir=args.out_dir)
    pipeline.gen_data(cfg)
    for variant in cfg.train.variants:
        prefix, result = pipeline.train_variant(cfg, variant)
        print(f"{prefix}: best val {result.best_val:.3f} @ epoch {result.best_epoch}")
    rows = pipeline.evaluate(cfg)
    path = pipeline.write_report(rows, pipeline.run_paths(cfg).reports / "snr_sweep.csv")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
