"""Command-line interface: run experiments, generate synthetic streams,
and aggregate reports."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, parse_config
from .exceptions import UrclError
from .report import generate_report
from .synth import write_synthetic_dataset
from .training import run_stream_experiment


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="urcl",
                                     description="Continual spatio-temporal forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one strategy over a streaming dataset")
    run.add_argument("--data", help="dataset directory (overrides the config's data_dir)")
    run.add_argument("--config", help="flat key = value config file")
    run.add_argument("--strategy", choices=("urcl", "one_fit_all", "finetune"),
                     help="training strategy (overrides the config)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="random seed (overrides the config)")
    run.add_argument("--resume", help="checkpoint record.json to resume from")

    synth = sub.add_parser("synth", help="generate the synthetic concept-drift stream")
    synth.add_argument("--out", required=True)
    synth.add_argument("--nodes", type=int, default=10)
    synth.add_argument("--segments", type=int, default=4,
                       help="number of incremental segments after the base segment")
    synth.add_argument("--slots", type=int, default=3000)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--channels", type=int, default=1)

    report = sub.add_parser("report", help="aggregate summary files into a comparison")
    report.add_argument("--out", required=True,
                        help="directory containing run outputs (scanned recursively)")
    report.add_argument("--no-figures", action="store_true")
    return parser


def _run(args) -> int:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    updates = {}
    if args.data:
        updates["data_dir"] = args.data
    if args.strategy:
        updates["strategy"] = args.strategy
    if args.seed is not None:
        updates["seed"] = args.seed
    if updates:
        cfg = ExperimentConfig(**{**cfg.__dict__, **updates})
    reports = run_stream_experiment(cfg, args.out, resume=args.resume)
    for report in reports:
        print(f"{report.role:>14s}  strategy={report.strategy:<11s} "
              f"test_mae={report.test_mae:.4f}  test_rmse={report.test_rmse:.4f}  "
              f"epochs={report.epochs_trained}")
    print(f"outputs written to {args.out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "synth":
            out = write_synthetic_dataset(args.out, nodes=args.nodes, slots=args.slots,
                                          n_incremental=args.segments, seed=args.seed,
                                          channels=args.channels)
            print(f"synthetic dataset written to {out}")
            return 0
        if args.command == "report":
            comparison = generate_report(args.out, figures=not args.no_figures)
            print(f"report written to {comparison.parent}")
            return 0
    except UrclError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
