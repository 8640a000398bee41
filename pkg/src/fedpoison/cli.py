"""Command line entry point: ``fedpoison run|validate|plotdata``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from fedpoison.config import parse_config
from fedpoison.errors import ConfigError
from fedpoison.experiment import emit_plotdata, expand, load_reports, run_matrix

EXIT_OK, EXIT_RUN_FAILED, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedpoison",
                                description="Poisoning attacks on federated edge learning.")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run every experiment in a config file")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the base seed")
    run.add_argument("--out", default=None, help="output directory (overrides the config)")
    run.add_argument("--jobs", type=int, default=1, help="parallel runs")

    val = sub.add_parser("validate", help="check a config file and print resolved runs")
    val.add_argument("config")
    val.add_argument("--seed", type=int, default=None)

    plot = sub.add_parser("plotdata", help="write CSV plot series from a report directory")
    plot.add_argument("report_dir")
    plot.add_argument("--out", default=None, help="defaults to <report_dir>/plotdata")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    if args.command == "plotdata":
        reports = load_reports(args.report_dir)
        out = Path(args.out) if args.out else Path(args.report_dir) / "plotdata"
        for path in emit_plotdata(reports, out):
            print(path)
        return EXIT_OK

    try:
        specs = parse_config(args.config, seed=args.seed,
                             output=getattr(args, "out", None))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate":
        for run in expand(specs):
            print(f"{run.run_id}\tseed={run.seed}\tmode={run.spec.mode}")
        return EXIT_OK

    reports = run_matrix(specs, args.out, jobs=args.jobs)
    failed = [r["run_id"] for r in reports if r.get("failed")]
    for r in reports:
        if r.get("failed"):
            print(f"FAILED {r['run_id']}: {r['error']}", file=sys.stderr)
        else:
            print(f"ok {r['run_id']}\taccuracy={r['final_metrics']['accuracy']:.4f}")
    return EXIT_RUN_FAILED if failed else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
