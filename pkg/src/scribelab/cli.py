"""Command-line entry point.

Six subcommands mirror the pipeline stages: prepare, train, tune,
predict, evaluate, report. Every subcommand takes ``--config PATH``
pointing at a TOML run description; a handful of flags override config
values for the common iteration loops (retrain one fold, re-predict
with auditing off, bump trial counts).

Exit codes: 0 success, 1 usage problems (unknown flags, bad config,
impossible requests), 2 data or checkpoint validation failures,
3 internal errors (diverged training, failed studies, bugs).
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback

from .config import load_config
from .errors import CheckpointError, DataValidationError, UsageError
from .pipeline import (
    cmd_evaluate,
    cmd_predict,
    cmd_prepare,
    cmd_report,
    cmd_train,
    cmd_tune,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad flags; we reserve 2 for data errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="scribelab",
        description="Train, tune, and evaluate the dialogue-to-note pipeline.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, metavar="PATH",
                       help="TOML run configuration")
        return p

    add("prepare", "Build the corpus, vocabulary, and fold manifest.")

    p = add("train", "Train models for one task across folds.")
    p.add_argument("--task", required=True, choices=["classify", "summarize"])
    p.add_argument("--mode", default="lora", choices=["lora", "full"],
                   help="adapter training or full fine-tune (default: lora)")
    p.add_argument("--fold", default="all",
                   help="fold index or 'all' (default: all)")
    p.add_argument("--arch", default="all",
                   help="summarizer variant name or 'all' (default: all)")

    p = add("tune", "Search decoding hyperparameters on validation data.")
    p.add_argument("--n-trials", type=int, default=None, metavar="N",
                   help="total trial budget (default: from config)")

    p = add("predict", "Write ensembled predictions for held-out examples.")
    p.add_argument("--task", required=True, choices=["classify", "summarize"])
    p.add_argument("--mode", default=None, choices=["lora", "full"])
    p.add_argument("--composition", default=None,
                   choices=["run1", "run2", "run3"],
                   help="which summarizer variants vote (default: from config)")
    audit = p.add_mutually_exclusive_group()
    audit.add_argument("--audit", dest="audit", action="store_true",
                       default=None, help="include per-model evidence rows")
    audit.add_argument("--no-audit", dest="audit", action="store_false")

    p = add("evaluate", "Score predictions against gold references.")
    p.add_argument("--task", required=True, choices=["classify", "summarize"])
    p.add_argument("--mode", default=None, choices=["lora", "full"])
    p.add_argument("--composition", default=None,
                   choices=["run1", "run2", "run3"])

    add("report", "Tabulate adapter-vs-full scores across variants.")

    return parser


def _dispatch(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    if args.command == "prepare":
        return cmd_prepare(cfg)
    if args.command == "train":
        return cmd_train(cfg, task=args.task, mode=args.mode,
                         fold=args.fold, arch=args.arch)
    if args.command == "tune":
        return cmd_tune(cfg, n_trials=args.n_trials)
    if args.command == "predict":
        return cmd_predict(cfg, task=args.task, composition=args.composition,
                           mode=args.mode, audit=args.audit)
    if args.command == "evaluate":
        return cmd_evaluate(cfg, task=args.task, composition=args.composition,
                            mode=args.mode)
    return cmd_report(cfg)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        result = _dispatch(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 — boundary: report and exit 3
        traceback.print_exc()
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
