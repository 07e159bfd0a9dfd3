"""Command-line runner.

    rac run SCENARIO [--log-dir D] [--seed N] [--export-graph F] [--report-format text|json-lines]
                     [--max-steps N] [--real-time] [--export-trace F] [--no-fsync]
    rac recover SCENARIO --log-dir D [--seed N]
    rac batch DIR [--log-dir D] [--jobs N]

Exit status: 0 on SUCCESS or ROLLED_BACK_CLEAN, 2 on HALTED_DIRTY, 1 on a
configuration error, 3 when the transaction log itself cannot be written.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from rac.runner import RunReport, recover_run, run_scenario
from rac.simenv.scenario import ConfigError, load_scenario
from rac.txlog import LogError

CONFIG_ERROR_EXIT = 1
LOG_ERROR_EXIT = 3
CRASH_EXIT = 70


def _emit(report: RunReport, fmt: str) -> None:
    sys.stdout.write(report.to_jsonl() if fmt == "json-lines" else report.to_text())
    sys.stdout.flush()


def _hard_crash() -> None:
    # harness-controlled kill: no cleanup, no flushing beyond what the log already did
    os._exit(CRASH_EXIT)


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(
        scenario,
        args.log_dir,
        seed=args.seed,
        max_steps=args.max_steps,
        real_time=args.real_time,
        durable=not args.no_fsync,
        crash_after_append=args.crash_after_append,
        on_crash=_hard_crash,
    )
    if args.export_graph:
        Path(args.export_graph).write_text(result.graph_dot(), encoding="utf-8")
    if args.export_trace:
        Path(args.export_trace).write_text(result.engine.trace.to_jsonl(), encoding="utf-8")
    _emit(result.report, args.report_format)
    return result.report.exit_code


def cmd_recover(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    result = recover_run(scenario, args.log_dir, seed=args.seed)
    _emit(result.report, args.report_format)
    return result.report.exit_code


def _batch_one(path: str, log_dir: str) -> tuple[str, RunReport | None, str | None]:
    try:
        scenario = load_scenario(path)
        return path, run_scenario(scenario, Path(log_dir) / Path(path).stem, durable=False).report, None
    except ConfigError as exc:
        return path, None, str(exc)


def cmd_batch(args: argparse.Namespace) -> int:
    files = sorted(str(p) for p in Path(args.directory).iterdir() if p.suffix in (".yaml", ".yml"))
    if not files:
        print(f"no scenario files in {args.directory}", file=sys.stderr)
        return CONFIG_ERROR_EXIT
    log_dir = args.log_dir or tempfile.mkdtemp(prefix="rac-batch-")
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_batch_one, files, [log_dir] * len(files)))
    else:
        rows = [_batch_one(f, log_dir) for f in files]

    header = f"{'scenario':<28} {'outcome':<18} {'retries':>7} {'alts':>5} {'comp':>5} {'advisor':>7} {'time_ms':>8} ledger"
    print(header)
    print("-" * len(header))
    status = 0
    for path, report, error in rows:
        if report is None:
            print(f"{Path(path).stem:<28} CONFIG_ERROR       {error}")
            status = max(status, CONFIG_ERROR_EXIT)
            continue
        c = report.counts
        print(
            f"{report.scenario:<28} {report.outcome.value:<18} {c.retries:>7} {c.alternatives:>5} "
            f"{c.compensations:>5} {c.advisor_calls:>7} {report.wall_time_ms:>8} "
            f"{'CLEAN' if report.ledger_verdict.clean else 'DIRTY'}"
        )
        status = max(status, report.exit_code)
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rac", description="Compensation-based recovery engine simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario")
    run.add_argument("scenario")
    run.add_argument("--log-dir", default="rac-logs")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--export-graph", metavar="FILE", help="write the execution graph (Graphviz dot)")
    run.add_argument("--export-trace", metavar="FILE", help="write the event trace (JSON lines)")
    run.add_argument("--report-format", choices=("text", "json-lines"), default="text")
    run.add_argument("--max-steps", type=int, default=None)
    run.add_argument("--real-time", action="store_true", help="sleep for real instead of on a virtual clock")
    run.add_argument("--no-fsync", action="store_true", help="flush log writes without fsync")
    run.add_argument("--crash-after-append", type=int, default=None, help=argparse.SUPPRESS)
    run.set_defaults(func=cmd_run)

    rec = sub.add_parser("recover", help="roll back a run that died mid-flight")
    rec.add_argument("scenario")
    rec.add_argument("--log-dir", required=True)
    rec.add_argument("--seed", type=int, default=None)
    rec.add_argument("--report-format", choices=("text", "json-lines"), default="text")
    rec.set_defaults(func=cmd_recover)

    batch = sub.add_parser("batch", help="run every scenario in a directory")
    batch.add_argument("directory")
    batch.add_argument("--log-dir", default=None)
    batch.add_argument("--jobs", type=int, default=1)
    batch.set_defaults(func=cmd_batch)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return CONFIG_ERROR_EXIT
    except LogError as exc:
        print(f"transaction log error: {exc}", file=sys.stderr)
        return LOG_ERROR_EXIT


if __name__ == "__main__":
    sys.exit(main())
