"""Command-line entry point.

Verbs: train, eval, oracle, rag, report. Every ExperimentConfig field is
exposed as a --flag; precedence is built-in defaults < config file < flags.
Exit codes: 0 success, 1 configuration/validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiment import (
    ConfigValidationError,
    ExperimentConfig,
    load_config,
    run_eval,
    run_experiment,
    run_rag,
)
from .report import render_report

_FLAG_TYPES = {"int": int, "float": float, "str": str, "str | None": str}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file; flags override its values")
    for f in dataclasses.fields(ExperimentConfig):
        kind = _FLAG_TYPES[str(f.type)]
        parser.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f.name,
            type=kind,
            default=argparse.SUPPRESS,
            help=f"override config key {f.name}",
        )


def _collect_overrides(args: argparse.Namespace) -> dict:
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    return {k: v for k, v in vars(args).items() if k in names}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="carbonopt",
        description="Carbon-aware task-offloading optimizer and RAG assistant",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    train = sub.add_parser("train", help="train gdm or ppo and write run artifacts")
    oracle = sub.add_parser("oracle", help="grid-search oracle strategy table")
    eval_p = sub.add_parser("eval", help="evaluate a checkpoint on held-out states")
    rag = sub.add_parser("rag", help="formulate a problem via retrieval + LLM backend")
    rag.add_argument("request", help="the network designer's request text")
    report = sub.add_parser("report", help="render figures from a run directory's CSVs")
    report.add_argument("--run-dir", help="directory holding the CSVs (default: output_dir)")

    for p in (train, oracle, eval_p, rag, report):
        _add_config_flags(p)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _collect_overrides(args))
    except ConfigValidationError as err:
        print(err, file=sys.stderr)
        return 1
    except (OSError, ValueError) as err:
        print(f"cannot load config: {err}", file=sys.stderr)
        return 1

    try:
        if args.verb == "train":
            if cfg.algorithm == "oracle":
                raise ConfigValidationError(["train needs algorithm gdm or ppo"])
            artifacts = run_experiment(cfg)
        elif args.verb == "oracle":
            artifacts = run_experiment(dataclasses.replace(cfg, algorithm="oracle"))
        elif args.verb == "eval":
            artifacts = run_eval(cfg)
        elif args.verb == "rag":
            _, path = run_rag(cfg, args.request)
            artifacts = {"transcript": str(path)}
        else:
            run_dir = args.run_dir or cfg.output_dir
            artifacts = {f"figure_{i}": str(p) for i, p in enumerate(render_report(run_dir))}
    except ConfigValidationError as err:
        print(err, file=sys.stderr)
        return 1
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"run failed: {type(err).__name__}: {err}", file=sys.stderr)
        return 2

    for name, path in artifacts.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
