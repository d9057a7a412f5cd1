"""Command-line entry point: ``xengine run|scenario|check|recover``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import oracle
from .bench import WorkloadSpec, report, run_micro
from .coordinator import ConfigError
from .history import History
from .pipeline import recover
from .scenarios import SCENARIOS, run_scenario

EXIT_OK, EXIT_VERDICT, EXIT_CONFIG = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep the message short
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="xengine", description="Cross-engine transactions over two toy MVCC engines.")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the microbenchmark")
    run.add_argument("--tables", type=int, default=2, help="tables per engine")
    run.add_argument("--rows", type=int, default=1000, help="rows per table")
    run.add_argument("--accesses", type=int, default=10, help="record accesses per transaction")
    run.add_argument("--read-pct", type=float, default=80.0)
    run.add_argument("--peer-pct", type=float, default=50.0, help="share of accesses sent to the peer engine")
    run.add_argument("--isolation", default="si", help="rc, si or serializable")
    run.add_argument("--workers", type=int, default=1)
    amount = run.add_mutually_exclusive_group()
    amount.add_argument("--txns", type=int)
    amount.add_argument("--seconds", type=float)
    run.add_argument("--seed", type=int, default=1)
    run.add_argument("--csr-capacity", type=int, default=1000)
    run.add_argument("--gc-threshold", type=int, default=5000)
    run.add_argument("--trace", type=Path, help="write the event history here")
    run.add_argument("--dump-csr", action="store_true", help="print the registry after the run")
    run.add_argument("--slow-delay-us", type=float, default=0.0, help="per-access delay in the peer engine")
    run.add_argument("--flush-delay-us", type=float, default=0.0, help="max random delay per log flush")
    run.add_argument("--wal-dir", type=Path, help="write each engine's durable log image here")
    run.add_argument("--check", action="store_true", help="run the history checks after the run")
    run.add_argument("--format", choices=("human", "machine"), default="human")

    sc = sub.add_parser("scenario", help="replay a scripted interleaving")
    sc.add_argument("name", help=", ".join(SCENARIOS))
    sc.add_argument("--format", choices=("human", "machine"), default="human")

    ck = sub.add_parser("check", help="run the history checks on a trace file")
    ck.add_argument("trace", type=Path)
    ck.add_argument("--no-serializable", action="store_true", help="skip the dependency-cycle check (always skipped unless every transaction is serializable)")
    ck.add_argument("--format", choices=("human", "machine"), default="human")

    rc = sub.add_parser("recover", help="recover from two log images")
    rc.add_argument("anchor_log", type=Path)
    rc.add_argument("peer_log", type=Path)
    rc.add_argument("--naive", action="store_true", help="replay each log on its own")
    return ap


def _cmd_run(args) -> int:
    spec = WorkloadSpec(
        tables_per_engine=args.tables, rows_per_table=args.rows, accesses_per_txn=args.accesses,
        read_pct=args.read_pct, peer_pct=args.peer_pct, isolation=args.isolation, workers=args.workers,
        txns=args.txns if args.txns is not None or args.seconds is not None else 1000,
        seconds=args.seconds, seed=args.seed, csr_capacity=args.csr_capacity,
        gc_threshold=args.gc_threshold, slow_delay_us=args.slow_delay_us, flush_delay_us=args.flush_delay_us,
    )
    history = History() if (args.trace or args.check) else None
    result = run_micro(spec, history=history)
    print(report(result.stats, args.format))
    if args.trace:
        history.save(args.trace)
    if args.wal_dir:
        args.wal_dir.mkdir(parents=True, exist_ok=True)
        for eng in (result.anchor, result.peer):
            (args.wal_dir / f"{eng.name}.wal").write_bytes(eng.wal.durable_bytes())
    if args.dump_csr and result.coordinator is not None and result.coordinator.csr is not None:
        print(result.coordinator.csr.dump(), end="")
    if args.check:
        findings = oracle.check_all(history.events, serializable=spec.level.name == "SERIALIZABLE")
        bad = {k: len(v) for k, v in findings.items() if v}
        print(f"checks: {'clean' if not bad else bad}")
        return EXIT_VERDICT if bad else EXIT_OK
    return EXIT_OK


def _cmd_scenario(args) -> int:
    if args.name not in SCENARIOS:
        print(f"unknown scenario {args.name!r}; choose from {', '.join(SCENARIOS)}", file=sys.stderr)
        return EXIT_CONFIG
    verdict = run_scenario(args.name)
    if args.format == "machine":
        print(json.dumps(verdict.to_dict(), sort_keys=True))
    else:
        print("\n".join(verdict.lines()))
    return EXIT_OK if verdict.passed else EXIT_VERDICT


def _cmd_check(args) -> int:
    history = History.load(args.trace)
    # Write skew is legal below serializable, so the cycle check only applies to traces run at that level.
    levels = {e.args[0] for e in history.events if e.kind == "Start"}
    serializable = not args.no_serializable and levels <= {"SERIALIZABLE"}
    findings = oracle.check_all(history.events, serializable=serializable)
    counts = {k: len(v) for k, v in findings.items()}
    if args.format == "machine":
        print(json.dumps({"events": len(history), "violations": counts}, sort_keys=True))
    else:
        print(f"{len(history)} events")
        for k, v in findings.items():
            print(f"  {k}: {len(v)}")
            for item in v[:5]:
                print(f"    {item}")
    return EXIT_VERDICT if any(counts.values()) else EXIT_OK


def _cmd_recover(args) -> int:
    logs = {"anchor": args.anchor_log.read_bytes(), "peer": args.peer_log.read_bytes()}
    rep = recover(logs, naive=args.naive)
    print(rep.to_json())
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": _cmd_run, "scenario": _cmd_scenario, "check": _cmd_check, "recover": _cmd_recover}[args.cmd]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
