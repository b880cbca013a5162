"""Command line entry point: ``flaglab run`` and ``flaglab tables``."""

from __future__ import annotations

import argparse
import os
import sys

from . import __version__
from .combinatorics import Partition, emit_tables, table_csv, table_text
from .harness import ConfigError, emit_report, load_config, run_suite, write_outputs
from .suites import SUITES

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _sizes(text):
    try:
        sizes = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated block sizes, got {text!r}") from None
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("block sizes must be positive")
    return sizes


def build_parser():
    ap = argparse.ArgumentParser(prog="flaglab", description="Flag kernel numerical laboratory.")
    ap.add_argument("--version", action="version", version=f"flaglab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an acceptance suite and write reports")
    run.add_argument("suite", choices=SUITES + ("all",))
    run.add_argument("--config", help="JSON config with at least a seed")
    run.add_argument("--out", default="flaglab-out", help="output directory")
    run.add_argument("--jobs", type=int, default=None, help="worker process cap")
    run.add_argument("--bless", action="store_true", help="overwrite golden files with fresh output")
    run.add_argument("--format", choices=("text", "json", "csv"), default="text",
                     help="format of the summary printed to stdout")

    tab = sub.add_parser("tables", help="print the shuffle class table of two partitions")
    tab.add_argument("--pa", type=_sizes, required=True, help="block sizes, e.g. 2,3")
    tab.add_argument("--pb", type=_sizes, required=True, help="block sizes, e.g. 1,2,2")
    tab.add_argument("--format", choices=("text", "csv"), default="text")
    tab.add_argument("--out", help="write the table to this file instead of stdout")
    return ap


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"flaglab: config error at {exc.pointer or '/'}: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"flaglab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    jobs = args.jobs if args.jobs is not None else cfg.get("jobs", 1)
    if jobs < 1:
        print("flaglab: --jobs must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    report = run_suite(args.suite, cfg, jobs=jobs, bless=args.bless)
    write_outputs(report, args.out)
    sys.stdout.buffer.write(emit_report(report, args.format))
    sys.stdout.flush()
    return EXIT_OK if report.ok else EXIT_FAIL


def _cmd_tables(args):
    pa, pb = Partition(args.pa), Partition(args.pb)
    if pa.N != pb.N:
        print(f"flaglab: partitions of different dimensions ({pa.N} and {pb.N})", file=sys.stderr)
        return EXIT_USAGE
    rows = emit_tables(pa, pb)
    text = table_csv(rows) if args.format == "csv" else table_text(rows)
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "run":
        return _cmd_run(args)
    return _cmd_tables(args)


if __name__ == "__main__":
    sys.exit(main())
