"""Command-line entry point: ``malaria-cnn {train,evaluate,compare,gradcheck,paramcheck}``.

Exit codes: 0 success, 1 validation/config error, 2 runtime/numeric error.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiment
from .config import resolve
from .errors import (CheckpointFormatError, ConfigError, LabelError, LayoutError, NumericError,
                     ShapeError, UndefinedMetricError)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--arch", help="densenet121 | vgg19 | alexnet | custom_cnn | res_attention | xception")
    p.add_argument("--data", help="corpus root with Parasitized/ and Uninfected/")
    p.add_argument("--synthetic", type=int, metavar="N", help="use N synthetic images instead of a corpus")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", help="width multiplier, e.g. 1/4")
    p.add_argument("--input-size", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out", help="output directory")
    p.add_argument("--deterministic", action=argparse.BooleanOptionalAction, default=None)


def _overrides(args) -> dict:
    return {
        "model.arch": args.arch, "data.root": args.data, "data.synthetic": args.synthetic,
        "train.epochs": args.epochs, "train.seed": args.seed, "model.scale": args.scale,
        "model.input_size": args.input_size, "train.batch_size": args.batch_size,
        "train.learning_rate": args.lr, "run.out": args.out,
        "train.deterministic": None if args.deterministic is None else str(args.deterministic).lower(),
    }


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malaria-cnn", description="Malaria blood-cell classification on a from-scratch CNN engine.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one architecture and write manifest, report, chart, checkpoint")
    _add_run_flags(p)
    p.add_argument("--resume", help="checkpoint to continue training from")

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the configured test split")
    p.add_argument("checkpoint")
    _add_run_flags(p)

    p = sub.add_parser("compare", help="train/evaluate several architectures on one shared split")
    _add_run_flags(p)
    p.add_argument("--archs", help="comma-separated architecture names (default: all six)")
    p.add_argument("--parallel", action="store_true", help="train architectures on separate threads")

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer kind")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("paramcheck", help="check published parameter-count anchors")
    p.add_argument("--scale", default="1")
    p.add_argument("--input-size", type=int, default=128)
    return parser


def _print_checks(lines) -> bool:
    ok = True
    for line in lines:
        print(f"{'PASS' if line.passed else 'FAIL'}  {line.name:<30} {line.detail}")
        ok &= line.passed
    return ok


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "gradcheck":
            return EXIT_OK if _print_checks(experiment.cmd_gradcheck(seed=args.seed)) else EXIT_INVALID
        if args.command == "paramcheck":
            from .config import _fraction

            checks, tables = experiment.cmd_paramcheck(_fraction(args.scale), args.input_size)
            ok = _print_checks(checks)
            print(tables)
            return EXIT_OK if ok else EXIT_INVALID

        overrides = _overrides(args)
        if args.command == "train":
            overrides["train.resume"] = args.resume
        if args.command == "compare":
            overrides["compare.archs"] = args.archs
            overrides["compare.parallel"] = "true" if args.parallel else None
        cfg = resolve(args.config, overrides)

        if args.command == "train":
            result = experiment.cmd_train(cfg)
            print((result.out_dir / "report.txt").read_text(), end="")
            print(f"artifacts written to {result.out_dir}")
        elif args.command == "evaluate":
            _, table = experiment.cmd_evaluate(args.checkpoint, cfg)
            print(table, end="")
        elif args.command == "compare":
            experiment.cmd_compare(cfg)
            out = cfg["run.out"]
            print(open(f"{out}/report.txt", encoding="utf-8").read(), end="")
            print(f"artifacts written to {out}")
        return EXIT_OK
    except (ConfigError, LayoutError, LabelError, CheckpointFormatError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericError, UndefinedMetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
