"""
Command line entry point: ``aggoco run | validate | metrics``.

Exit codes: 0 success, 1 unexpected error, 2 bad config or corrupt trace,
3 schedule validation failure, 4 non-finite iterate.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from ..engine import NonFiniteError, ScheduleError
from ..network import schedule_from_dict, validate_schedule
from .config import ConfigError, ExperimentConfig, load_config
from .io import TraceFormatError
from .runner import run_experiment, trace_metrics

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_SCHEDULE, EXIT_NONFINITE = 0, 1, 2, 3, 4

MEASURES = ("regret", "pathvar", "gradvar", "residuals")


def parse_seeds(text: str) -> list:
    """``"1..10"`` (inclusive) or ``"1,2,5"``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = text.split("..", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}; use A..B or a,b,c") from None


def _measures(text: str) -> list:
    out = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in out if m not in MEASURES]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown measures {bad}; choose from {MEASURES}")
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aggoco", description="Online distributed aggregative optimization.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", required=True, help="YAML/JSON config or a previous manifest.json")
    r.add_argument("--out", help="output directory (default: output.dir, $AGGOCO_OUT_DIR or ./out)")
    r.add_argument("--seed", type=int, help="override run.seed")
    r.add_argument("--seeds", type=parse_seeds, help="seed range A..B or list a,b,c")
    r.add_argument("--workers", type=int, help="parallel workers for multi-seed runs (default: one per seed, up to the CPU count)")
    r.add_argument("--algorithm", choices=("odgt", "odgt-stochastic", "centralized"))
    r.add_argument("--steps", type=int, help="override run.steps")
    r.add_argument("--stepsize", help="diminishing, constant or constant:ALPHA")
    r.add_argument("--record", choices=("full", "summary"))
    r.add_argument("--no-strict", action="store_true", help="warn instead of failing on schedule violations")

    v = sub.add_parser("validate", help="check a communication schedule")
    src = v.add_mutually_exclusive_group(required=True)
    src.add_argument("--schedule", help="YAML/JSON schedule record")
    src.add_argument("--config", help="experiment config; its schedule section is checked")
    v.add_argument("--window", type=int, help="rounds to check (default: one period, 100 for generated)")

    m = sub.add_parser("metrics", help="compute regret and variation measures from traces")
    m.add_argument("--trace", required=True, help="trace file or run directory")
    m.add_argument("--measures", type=_measures, help="comma list from " + ",".join(MEASURES))
    m.add_argument("--expect-over-seeds", action="store_true",
                   help="average R_t/t over every trace of the run directory")
    m.add_argument("--out", help="directory for metrics.json and series (default: next to the trace)")
    return p


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.algorithm:
        cfg.run.algorithm = args.algorithm
    if args.steps is not None:
        cfg.run.steps = args.steps
    if args.stepsize:
        cfg.run.stepsize = args.stepsize
    if args.seed is not None:
        cfg.run.seed = args.seed
        cfg.run.seeds = None
    if args.record:
        cfg.run.record = args.record
    if args.no_strict:
        cfg.run.strict = False
    if args.seeds:
        cfg.run.seeds = args.seeds
    cfg = ExperimentConfig.from_dict(cfg.to_dict())
    workers = args.workers or min(len(cfg.seeds), os.cpu_count() or 1)
    result = run_experiment(cfg, out_dir=args.out, workers=workers)
    summary = {
        "files": [str(f) for f in result.files],
        "seeds": cfg.seeds,
        "final_loss": [float(t.loss[-1]) for t in result.traces],
        "warnings": sorted({w for t in result.traces for w in t.warnings}),
    }
    if result.aggregate:
        summary["aggregate"] = result.aggregate
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_validate(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        schedule = cfg.build_schedule()
    else:
        try:
            desc = yaml.safe_load(Path(args.schedule).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read schedule {args.schedule}: {exc}") from exc
        if not isinstance(desc, dict):
            raise ConfigError("schedule file must hold a mapping")
        try:
            schedule = schedule_from_dict(desc)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from exc
    report = validate_schedule(schedule, args.window)
    print(report)
    return EXIT_OK if report.ok else EXIT_SCHEDULE


def _cmd_metrics(args) -> int:
    report = trace_metrics(args.trace, args.measures, args.expect_over_seeds, args.out)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "validate": _cmd_validate, "metrics": _cmd_metrics}[args.command]
    try:
        return handler(args)
    except ScheduleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(exc.report, file=sys.stderr)
        return EXIT_SCHEDULE
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_NONFINITE
    except (ConfigError, TraceFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # problem constructors reject inconsistent parameters with ValueError
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
