"""Command-line entry points: gen-data, train, evaluate, sweep-snr, sweep-rf.

Exit codes: 0 on success, 2 on configuration/parameter errors, 3 on
numerical failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigError, InvalidCovarianceError, InvalidParameterError, NumericalError
from . import pipeline
from .config import load_config


def _add_common(sub):
    sub.add_argument("--config", required=True, help="TOML experiment config")
    sub.add_argument("--profile", choices=("desk", "paper"), default=None)
    sub.add_argument("--seed", type=int, default=None)
    sub.add_argument("--out-dir", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chanest",
        description="Generative channel estimation benchmarks for "
                    "underdetermined pilot systems.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="write channel datasets and observation sets")
    _add_common(gen)

    tr = sub.add_parser("train", help="train the configured VAE variants")
    _add_common(tr)
    tr.add_argument("--variant", choices=("noisy", "real_fix", "real_var"),
                    default=None, help="train a single variant")
    tr.add_argument("--rf-chains", type=int, nargs="*", default=None,
                    help="train at these RF-chain counts (hybrid sweeps)")

    ev = sub.add_parser("evaluate", help="NMSE of each estimator over the SNR grid")
    _add_common(ev)

    ss = sub.add_parser("sweep-snr", help="alias of evaluate writing snr_sweep.csv")
    _add_common(ss)

    sr = sub.add_parser("sweep-rf", help="NMSE across RF-chain counts at one SNR")
    _add_common(sr)
    return parser


def _run(args) -> int:
    cfg = load_config(args.config, profile=args.profile, seed=args.seed,
                      out_dir=args.out_dir)
    paths = pipeline.run_paths(cfg)
    if args.command == "gen-data":
        out = pipeline.gen_data(cfg)
        print(f"wrote {len(out)} artifacts under {paths.data}")
        return 0
    if args.command == "train":
        variants = (args.variant,) if args.variant else cfg.train.variants
        geometries = args.rf_chains if args.rf_chains else [None]
        for m in geometries:
            for variant in variants:
                prefix, result = pipeline.train_variant(cfg, variant, m_rows=m)
                print(f"{prefix}: best val loss {result.best_val:.4f} "
                      f"(epoch {result.best_epoch})")
        return 0
    if args.command in ("evaluate", "sweep-snr"):
        rows = pipeline.evaluate(cfg)
        name = "nmse.csv" if args.command == "evaluate" else "snr_sweep.csv"
        path = pipeline.write_report(rows, paths.reports / name)
        pipeline.write_wide_data(rows, path.with_suffix(".dat"), axis="snr")
        print(f"wrote {path} ({len(rows)} rows)")
        return 0
    if args.command == "sweep-rf":
        rows = pipeline.sweep_rf(cfg)
        path = pipeline.write_report(rows, paths.reports / "rf_sweep.csv")
        pipeline.write_wide_data(rows, path.with_suffix(".dat"), axis="rf")
        print(f"wrote {path} ({len(rows)} rows)")
        return 0
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except (ConfigError, InvalidParameterError, InvalidCovarianceError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
