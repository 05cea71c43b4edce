"""Command-line entry point with the run/simulate/evaluate/inspect subcommands."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import ConfigError, IoError, PipelineError, PipelineFailure
from .pipeline import evaluate, inspect, run_pipeline, simulate
from .trajectory import format_metrics_table

log = logging.getLogger("ctevo")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctevo",
        description="Continuous-time stereo event-camera visual odometry")
    parser.add_argument("--log-level", default="warn",
                        choices=["error", "warn", "info", "debug"])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the full pipeline")
    run.add_argument("--config", required=True)
    run.add_argument("--events", help="raw event file (full front end)")
    run.add_argument("--tracklets",
                     help="injected tracklet dump (skips the front end)")
    run.add_argument("--gt", help="ground-truth trajectory (TUM format)")
    run.add_argument("--eval-times", help="file with one evaluation time per line")
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int, help="override ransac.seed")
    run.add_argument("--init-only", action="store_true",
                     help="skip the Gauss-Newton refinement (diagnostic: "
                          "dead-reckoned constant-velocity trajectory)")

    sim = sub.add_parser("simulate", help="generate a synthetic scene")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, help="override simulate.seed")

    ev = sub.add_parser("evaluate", help="compare two trajectory files")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    ev.add_argument("--eval-times")
    ev.add_argument("--out", required=True)
    ev.add_argument("--config", help="accepted for symmetry; unused")

    ins = sub.add_parser("inspect", help="dump cluster/tracklet statistics")
    ins.add_argument("--config", required=True)
    ins.add_argument("--events", required=True)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level={"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}[args.log_level],
        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            config = load_config(args.config)
            result = run_pipeline(
                config, args.out, events_path=args.events,
                tracklets_path=args.tracklets, gt_path=args.gt,
                eval_times_path=args.eval_times, seed=args.seed,
                refine=not args.init_only)
            solved = sum(d.status == "ok" for d in result.slide.diagnostics)
            print(f"solved {solved}/{len(result.slide.diagnostics)} windows, "
                  f"{len(result.slide.knots)} knots")
            for name, path in result.artifacts.items():
                print(f"  {name}: {path}")
            if result.report is not None:
                print(format_metrics_table(result.report), end="")
        elif args.command == "simulate":
            config = load_config(args.config)
            artifacts = simulate(config, args.out, seed=args.seed)
            for name, path in artifacts.items():
                print(f"  {name}: {path}")
        elif args.command == "evaluate":
            report = evaluate(args.est, args.gt, args.out,
                              eval_times_path=args.eval_times)
            print(format_metrics_table(report), end="")
        elif args.command == "inspect":
            config = load_config(args.config)
            print(inspect(config, args.events), end="")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except IoError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except PipelineFailure as exc:
        print(f"pipeline error: {exc}", file=sys.stderr)
        return 4
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
