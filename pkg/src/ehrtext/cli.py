"""Command-line entry point: ``ehrtext {synth,build,export,eval-tabular,eval-zeroshot,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import config as C
from . import pipeline
from .emit import EmitError
from .evaluate import TrainingError
from .ingest import IngestError
from .textualize import parse_groups
from .zeroshot import PromptError

logger = logging.getLogger("ehrtext")

COMMANDS = ("synth", "build", "export", "eval-tabular", "eval-zeroshot", "report")

ERROR_CATEGORIES = (
    (C.ConfigError, "config"),
    (IngestError, "ingest"),
    (EmitError, "emit"),
    (TrainingError, "training"),
    (PromptError, "prompt"),
    (pipeline.PipelineError, "pipeline"),
    (OSError, "io"),
    (ValueError, "value"),
)


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run config JSON (defaults apply to missing keys)")
    common.add_argument("--data", type=Path, help="directory holding the input CSV tables")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--representation", choices=("rep1", "rep2"))
    common.add_argument("--features", help="comma-separated groups to render: DEMO,COND,CHART_LAB,MEDS,PROC,OUTE")
    common.add_argument("--prompt", choices=("p1", "p2"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ehrtext", description="MIMIC-IV tables to tabular and text datasets.")
    sub = parser.add_subparsers(dest="command", required=True)
    synth = sub.add_parser("synth", parents=[common], help="write synthetic input tables to --data")
    synth.add_argument("--n", type=int, help="number of patients")
    synth.add_argument("--signal", type=float, help="signal strength in [0, 1]")
    synth.add_argument("--prevalence", type=float, help="planted mortality prevalence")
    for name, text in (
        ("build", "cohort, features and documents (cached)"),
        ("export", "write JSONL/CSV datasets"),
        ("eval-tabular", "logistic regression with k-fold CV"),
        ("eval-zeroshot", "prompt an LLM endpoint on the test split"),
        ("report", "consolidate evaluation results"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    o: dict = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.threads is not None:
        o["threads"] = args.threads
    if args.representation:
        o["features"] = {"representation": args.representation}
    if args.features:
        o["text"] = {"groups": sorted(g.value for g in parse_groups(args.features))}
    if args.prompt:
        o["zeroshot"] = {"prompt": args.prompt}
    synth = {}
    for flag, key in (("n", "n_patients"), ("signal", "signal_strength"), ("prevalence", "mortality_prevalence")):
        if getattr(args, flag, None) is not None:
            synth[key] = getattr(args, flag)
    if synth:
        o["synth"] = synth
    paths = {k: str(getattr(args, k)) for k in ("data", "out") if getattr(args, k) is not None}
    if paths:
        o["paths"] = paths
    return o


def _path(cfg: dict, key: str, parser: argparse.ArgumentParser) -> Path:
    value = cfg["paths"][key]
    if not value:
        parser.error(f"--{key} is required (or set paths.{key} in the config)")
    return Path(value)


def run(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    try:
        overrides = _overrides(args)
    except ValueError as exc:
        parser.error(str(exc))
    if args.config is not None and not args.config.is_file():
        parser.error(f"config file not found: {args.config}")
    cfg = C.load_config(args.config, overrides)

    if args.command == "synth":
        ledger = pipeline.run_synth(cfg, _path(cfg, "data", parser))
        return {"planted_cohort_size": ledger["planted_cohort_size"], "row_counts": ledger["row_counts"]}
    if args.command == "report":
        return pipeline.run_report(_path(cfg, "out", parser))

    data, out = _path(cfg, "data", parser), _path(cfg, "out", parser)
    art = pipeline.run_build(cfg, data, out)
    if args.command == "build":
        return {"cohort": len(art.cohort), "build_digest": art.digest}
    if args.command == "export":
        manifests = pipeline.run_export(cfg, art, out)
        return {k: m["counts"] for k, m in manifests.items()}
    if args.command == "eval-tabular":
        return pipeline.run_eval_tabular(cfg, art, out)["test"]
    return pipeline.run_eval_zeroshot(cfg, art, out)


def main(argv: list[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        result = run(args, parser)
    except Exception as exc:
        for cls, category in ERROR_CATEGORIES:
            if isinstance(exc, cls):
                print(f"error [{category}]: {exc}", file=sys.stderr)
                return 1
        raise
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
