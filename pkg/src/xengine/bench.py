"""YCSB-style microbenchmark over the two engines."""

from __future__ import annotations

import hashlib
import json
import math
import random
import struct
import threading
import time
from collections import Counter as Tally
from dataclasses import asdict, dataclass, field
from typing import Optional

from .coordinator import ConfigError, Coordinator
from .csr import CsrRegistry
from .engine import Engine, Isolation, SnapshotKind, TxnAborted, make_engine
from .history import History
from .pipeline import CommitQueue

RECORD_BYTES = 232
_INTS = struct.Struct("<ii")
STRING_BYTES = RECORD_BYTES - _INTS.size  # 224-byte string column

# Report fields that depend on wall-clock time and are left out of determinism comparisons.
WALL_CLOCK_FIELDS = ("elapsed_s", "throughput_tps", "latency_p95_ms", "flushes")


def make_record(a: int, b: int, fill: str = "x") -> bytes:
    text = (fill * STRING_BYTES)[:STRING_BYTES].encode()
    return _INTS.pack(a, b) + text


def record_fields(payload: bytes) -> tuple[int, int, str]:
    a, b = _INTS.unpack_from(payload)
    return a, b, payload[_INTS.size:].decode()


def row_key(i: int) -> bytes:
    return b"%08d" % i


@dataclass
class WorkloadSpec:
    tables_per_engine: int = 2
    rows_per_table: int = 1000
    accesses_per_txn: int = 10
    read_pct: float = 80.0
    peer_pct: float = 50.0
    isolation: str = "si"
    workers: int = 1
    txns: Optional[int] = 1000
    seconds: Optional[float] = None
    seed: int = 1
    csr_capacity: int = 1000
    gc_threshold: int = 5000
    slow_delay_us: float = 0.0
    flush_delay_us: float = 0.0  # upper bound of a uniformly random per-flush delay
    record_bytes: int = RECORD_BYTES

    def validate(self) -> None:
        for name in ("read_pct", "peer_pct"):
            v = getattr(self, name)
            if not 0 <= v <= 100:
                raise ConfigError(f"{name} must be within [0, 100], got {v}")
        for name in ("tables_per_engine", "rows_per_table", "accesses_per_txn", "workers",
                     "csr_capacity", "gc_threshold"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if (self.txns is None) == (self.seconds is None):
            raise ConfigError("give exactly one of txns or seconds")
        if self.record_bytes != RECORD_BYTES:
            raise ConfigError(f"records are fixed at {RECORD_BYTES} bytes")
        try:
            Isolation.parse(self.isolation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def level(self) -> Isolation:
        return Isolation.parse(self.isolation)

    def split(self) -> tuple[int, int]:
        """(reads, peer accesses) per transaction."""
        n = self.accesses_per_txn
        return round(n * self.read_pct / 100), math.ceil(n * self.peer_pct / 100)


@dataclass
class RunStats:
    issued: int = 0
    committed: int = 0
    aborted_by_reason: dict = field(default_factory=dict)
    elapsed_s: float = 0.0
    throughput_tps: float = 0.0
    latency_p95_ms: float = 0.0
    csr_selections: int = 0
    csr_commit_checks: int = 0
    csr_indexes_created: int = 0
    csr_indexes_recycled: int = 0
    csr_indexes_live: int = 0
    flushes: int = 0
    state_digest: str = ""

    @property
    def aborted(self) -> int:
        return sum(self.aborted_by_reason.values())

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aborted"] = self.aborted
        return d


@dataclass
class RunResult:
    stats: RunStats
    history: Optional[History]
    coordinator: Optional[Coordinator]
    anchor: Engine
    peer: Engine


class _CountingRegistry(CsrRegistry):
    """Registry that also counts how often each algorithm runs."""

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.selections = 0
        self.checks = 0

    def select_snapshot(self, *a, **kw):
        self.selections += 1
        return super().select_snapshot(*a, **kw)

    def commit_check(self, *a, **kw):
        self.checks += 1
        return super().commit_check(*a, **kw)


def build_engines(spec: WorkloadSpec) -> tuple[Engine, Engine]:
    ser = spec.level is Isolation.SERIALIZABLE
    flush = 0.0
    if spec.flush_delay_us > 0:
        rng = random.Random(spec.seed ^ 0x5EED)
        flush = lambda: rng.uniform(0, spec.flush_delay_us) / 1e6  # noqa: E731
    anchor = make_engine("anchor", SnapshotKind.COUNTER, serializable_validation=ser, flush_latency=flush)
    peer = make_engine("peer", SnapshotKind.READ_VIEW, serializable_validation=ser, flush_latency=flush,
                       per_access_delay=spec.slow_delay_us / 1e6)
    for eng, prefix in ((anchor, "a"), (peer, "p")):
        for t in range(spec.tables_per_engine):
            for i in range(spec.rows_per_table):
                eng.install(f"{prefix}{t}", row_key(i), make_record(i, 0), 1)
    return anchor, peer


def _plan(spec: WorkloadSpec, rng: random.Random) -> list[tuple[str, str, str, bytes]]:
    """One transaction's accesses: (engine, op, table, key)."""
    n = spec.accesses_per_txn
    reads, peer_n = spec.split()
    ops = ["read"] * reads + ["write"] * (n - reads)
    engines = ["peer"] * peer_n + ["anchor"] * (n - peer_n)
    rng.shuffle(ops)
    rng.shuffle(engines)
    plan = []
    used = set()
    for op, eng in zip(ops, engines):
        prefix = "p" if eng == "peer" else "a"
        while True:
            table = f"{prefix}{rng.randrange(spec.tables_per_engine)}"
            key = row_key(rng.randrange(spec.rows_per_table))
            if (table, key) not in used or len(used) >= spec.tables_per_engine * spec.rows_per_table * 2:
                break
        used.add((table, key))
        plan.append((eng, op, table, key))
    return plan


def state_digest(*engines: Engine) -> str:
    h = hashlib.sha256()
    for eng in engines:
        for (table, key), (ts, payload) in sorted(eng.committed_state().items()):
            h.update(f"{eng.name}|{table}|{key.hex()}|{ts}|".encode())
            h.update(payload)
    return h.hexdigest()


def run_micro(spec: WorkloadSpec, *, history: Optional[History] = None, bypass: bool = False) -> RunResult:
    """Run the workload.

    ``bypass`` keeps the coordinator API but switches off every cross-engine hook:
    no live table, no registry, no commit queue.  Only anchor-only workloads may use it.
    """
    spec.validate()
    if bypass and spec.peer_pct > 0:
        raise ConfigError("bypass mode only runs anchor-only workloads")
    anchor, peer = build_engines(spec)
    queue = csr = None
    if bypass:
        coord = Coordinator(anchor, peer, isolation=spec.level, coordinated=False, history=history)
    else:
        csr = _CountingRegistry(spec.csr_capacity, spec.gc_threshold)
        queue = CommitQueue({anchor.name: anchor, peer.name: peer}, history)
        coord = Coordinator(anchor, peer, isolation=spec.level, csr=csr, pipeline=queue, history=history)
        queue.start()
    counts = [spec.txns // spec.workers + (i < spec.txns % spec.workers) for i in range(spec.workers)] \
        if spec.txns is not None else [None] * spec.workers
    per_worker = [dict(issued=0, committed=0, aborts=Tally(), lat=[]) for _ in range(spec.workers)]
    stop_at = None if spec.seconds is None else time.perf_counter() + spec.seconds

    def worker(w: int) -> None:
        rng = random.Random(f"{spec.seed}:{w}")
        out = per_worker[w]
        n = 0
        while (counts[w] is None or n < counts[w]) and (stop_at is None or time.perf_counter() < stop_at):
            n += 1
            plan = _plan(spec, rng)
            out["issued"] += 1
            start = time.perf_counter()
            txn = coord.begin()
            try:
                for eng, op, table, key in plan:
                    if op == "read":
                        coord.read(txn, eng, table, key)
                    else:
                        coord.write(txn, eng, table, key, make_record(int(key), txn.id))
                ticket = coord.commit(txn)
            except TxnAborted as exc:
                out["aborts"][exc.reason] += 1
                continue
            out["committed"] += 1
            out["lat"].append((start, ticket))

    t0 = time.perf_counter()
    if spec.workers == 1:
        worker(0)
    else:
        threads = [threading.Thread(target=worker, args=(w,)) for w in range(spec.workers)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
    if queue is not None:
        queue.drain()
        queue.stop()
    elapsed = time.perf_counter() - t0

    stats = RunStats(elapsed_s=round(elapsed, 6))
    aborts = Tally()
    lats = []
    for out in per_worker:
        stats.issued += out["issued"]
        stats.committed += out["committed"]
        aborts.update(out["aborts"])
        for start, ticket in out["lat"]:
            end = ticket.acked_at if ticket is not None and ticket.acked_at else None
            if end is not None:
                lats.append(end - start)
    stats.aborted_by_reason = dict(sorted(aborts.items()))
    stats.throughput_tps = round(stats.committed / elapsed, 3) if elapsed > 0 else 0.0
    if lats:
        lats.sort()
        stats.latency_p95_ms = round(lats[min(len(lats) - 1, int(0.95 * len(lats)))] * 1e3, 4)
    if csr is not None:
        stats.csr_selections = csr.selections
        stats.csr_commit_checks = csr.checks
        stats.csr_indexes_created = csr.indexes_created
        stats.csr_indexes_recycled = csr.indexes_recycled
        stats.csr_indexes_live = len(csr.indexes)
    if queue is not None:
        stats.flushes = queue.flushes
    stats.state_digest = state_digest(anchor, peer)
    return RunResult(stats, history, coord, anchor, peer)


def report(stats: RunStats, fmt: str = "human") -> str:
    d = stats.to_dict()
    if fmt == "machine":
        return json.dumps(d, sort_keys=True)
    if fmt != "human":
        raise ConfigError(f"unknown report format {fmt!r}")
    lines = [
        f"issued        {stats.issued}",
        f"committed     {stats.committed}",
        f"aborted       {stats.aborted}" + "".join(f"  {k}={v}" for k, v in stats.aborted_by_reason.items()),
        f"throughput    {stats.throughput_tps:.1f} txn/s over {stats.elapsed_s:.3f} s",
        f"latency p95   {stats.latency_p95_ms:.3f} ms",
        f"csr           selections={stats.csr_selections} checks={stats.csr_commit_checks} "
        f"indexes created={stats.csr_indexes_created} recycled={stats.csr_indexes_recycled} live={stats.csr_indexes_live}",
        f"state digest  {stats.state_digest}",
    ]
    return "\n".join(lines)


def comparable(machine_report: str) -> dict:
    """Parsed machine report without the wall-clock fields."""
    d = json.loads(machine_report)
    for k in WALL_CLOCK_FIELDS:
        d.pop(k, None)
    return d
