"""Command-line entry points: run experiments, replay transcripts, build reports."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiment import ConfigError, ExperimentConfig, build_report_rows, replay, run_experiment
from .tooltask.metrics import metrics_csv

DEFAULT_STRATEGIES = "random,majority,max_reward:mean,max_reward:max,weighted_majority:mean,weighted_majority:max"


def _parse_seeds(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def _load_config(path: str, args) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if args.seeds:
        raw["seeds"] = _parse_seeds(args.seeds)
        raw["runs"] = len(raw["seeds"])
    if args.workers is not None:
        raw["workers"] = args.workers
    if args.output is not None:
        raw["output_dir"] = args.output
    if args.cache is not None:
        raw.setdefault("cache", {})["enabled"] = args.cache
    if args.base_url:
        for endpoint in raw.get("models", {}).values():
            if endpoint.get("kind") == "http_chat":
                endpoint["base_url"] = args.base_url
    return ExperimentConfig.from_dict(raw)


def cmd_run(args) -> int:
    try:
        config = _load_config(args.config, args)
    except ConfigError as exc:
        print(f"config validation failed: {exc}", file=sys.stderr)
        return 2
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2
    report = run_experiment(config)
    print(f"method={report.method} aggregation={report.aggregation}")
    for metric, stats in sorted(report.aggregate.items()):
        print(f"{metric}: mean={stats['mean']:.4f} std={stats['std']:.4f} sem={stats['sem']:.4f}")
    print(f"report written to {Path(config.output_dir) / 'report.json'}")
    return 0


def cmd_replay(args) -> int:
    selection = None
    if args.strategy:
        from .experiment import parse_strategy_spec

        selection = parse_strategy_spec(args.strategy)
        if args.seed is not None:
            selection.rng_seed = args.seed
    try:
        report = replay(args.transcripts, selection=selection)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"cannot replay transcripts: {exc}", file=sys.stderr)
        return 2
    doc = report.to_dict()
    if args.output:
        Path(args.output).write_text(json.dumps(doc, sort_keys=True, indent=1), encoding="utf-8")
        print(f"replay report written to {args.output}")
    else:
        print(json.dumps(doc["aggregate"], sort_keys=True, indent=1))
    return 0


def cmd_report(args) -> int:
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    try:
        rows = build_report_rows(args.transcripts, strategies)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        print(f"cannot build report: {exc}", file=sys.stderr)
        return 2
    csv_text = metrics_csv(rows)
    if args.output:
        Path(args.output).write_text(csv_text, encoding="utf-8")
        print(f"report written to {args.output}")
    else:
        print(csv_text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentsearch", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the experiment config JSON")
    p_run.add_argument("--seeds", help="comma-separated seed override, e.g. 1,2,3")
    p_run.add_argument("--workers", type=int, help="parallel worker override")
    p_run.add_argument("--output", help="output directory override")
    p_run.add_argument("--base-url", dest="base_url", help="base URL override for all http endpoints")
    cache_group = p_run.add_mutually_exclusive_group()
    cache_group.add_argument("--cache", dest="cache", action="store_true", default=None)
    cache_group.add_argument("--no-cache", dest="cache", action="store_false", default=None)
    p_run.set_defaults(func=cmd_run)

    p_replay = sub.add_parser("replay", help="recompute metrics from stored transcripts")
    p_replay.add_argument("--transcripts", required=True, help="transcript file or directory")
    p_replay.add_argument("--strategy", help="selection override, e.g. majority or max_reward:max")
    p_replay.add_argument("--seed", type=int, help="selection seed override")
    p_replay.add_argument("--output", help="where to write the replay report JSON")
    p_replay.set_defaults(func=cmd_replay)

    p_report = sub.add_parser("report", help="CSV of every requested selection strategy")
    p_report.add_argument("--transcripts", required=True, help="transcript file or directory")
    p_report.add_argument("--strategies", default=DEFAULT_STRATEGIES, help="comma-separated strategy specs")
    p_report.add_argument("--output", help="where to write the CSV")
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
