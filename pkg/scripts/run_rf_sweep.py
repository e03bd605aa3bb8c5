#!/usr/bin/env python3
"""NMSE versus RF-chain count at a fixed SNR (trains one model set per count)."""

import argparse
from pathlib import Path

from chanest.harness import pipeline
from chanest.harness.config import load_config

REPO = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=REPO / "configs" / "hybrid_desk.toml")
    ap.add_argument("--profile", choices=("desk", "paper"), default=None)
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out-dir", default=None)
    args = ap.parse_args()
    cfg = load_config(args.config, profile=args.profile, seed=args.seed,
                      out_dir=args.out_dir)
    pipeline.gen_data(cfg)
    for m in cfg.eval.rf_chains:
        for variant in cfg.train.variants:
            pipeline.train_variant(cfg, variant, m_rows=m)
    rows = pipeline.sweep_rf(cfg)
    path = pipeline.write_report(rows, pipeline.run_paths(cfg).reports / "rf_sweep.csv")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
