"""Pipelined group commit across two logs, and crash recovery.

Committing workers reserve a queue slot once their commit is decided and
publish the commit-end LSNs after post-commit.  A single daemon flushes
whichever log lags behind the queue head and acknowledges the longest FIFO
prefix whose records are durable in every participating log.
"""

from __future__ import annotations

import json
import threading
import time
from collections import defaultdict, deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional

from .engine import Engine
from .history import History
from .wal import RecordKind, decode_commit_begin, decode_commit_end, decode_data, decode_records


class Ticket:
    """One queue slot; doubles as the client's completion handle."""

    __slots__ = ("seq", "txn", "required", "acked_at", "_queue")

    def __init__(self, seq: int, txn: int, queue: "CommitQueue"):
        self.seq = seq
        self.txn = txn
        self.required: Optional[dict] = None  # engine name -> lsn that must be below durable_lsn
        self.acked_at: Optional[float] = None
        self._queue = queue

    @property
    def ticket(self) -> "Ticket":
        return self

    @property
    def done(self) -> bool:
        return self.acked_at is not None

    def wait(self, timeout: Optional[float] = None) -> bool:
        with self._queue._acked:
            return self._queue._acked.wait_for(lambda: self.acked_at is not None, timeout)


CommitEntry = Ticket


class CommitQueue:
    def __init__(self, engines: Mapping[str, Engine], history: Optional[History] = None,
                 step_hook: Optional[Callable[[str, int], None]] = None, group_window: float = 0.001):
        self.engines = dict(engines)
        self.group_window = group_window  # how long the daemon lets commits pile up before a round
        self.history = history
        self.step_hook = step_hook
        self._cond = threading.Condition()
        self._acked = threading.Condition(threading.Lock())
        self._reserve_lock = threading.Lock()  # keeps slot numbers in deque order
        self._pending: deque[Ticket] = deque()
        self._next_seq = 1
        self._seen_durable = {name: 1 for name in self.engines}
        self._thread: Optional[threading.Thread] = None
        self._stop = False
        self.acked = 0
        self.flushes = 0

    def __len__(self) -> int:
        return len(self._pending)

    def reserve(self, txn: int) -> Ticket:
        """Take the next FIFO slot; the entry is not acknowledgeable until published."""
        with self._reserve_lock:
            entry = Ticket(self._next_seq, txn, self)
            self._next_seq += 1
            self._pending.append(entry)
        return entry

    def publish(self, entry: Ticket, required: dict) -> None:
        if not required:
            raise ValueError("a commit entry needs at least one log position")
        entry.required = required
        # Only a newly publishable head can find the daemon idle; later entries are
        # picked up when the daemon acknowledges their predecessors.
        if self._pending and self._pending[0] is entry:
            with self._cond:
                self._cond.notify()

    def enqueue(self, txn: int, required: dict) -> Ticket:
        entry = self.reserve(txn)
        self.publish(entry, dict(required))
        return entry

    # daemon ----------------------------------------------------------

    def _note_durable(self, name: str, lsn: int) -> None:
        if lsn > self._seen_durable[name]:
            self._seen_durable[name] = lsn
            if self.history is not None:
                self.history.record(0, name, "Durable", lsn)

    def daemon_step(self) -> int:
        """Flush lagging logs for the head entry and acknowledge the satisfied FIFO prefix."""
        pending = self._pending
        head = pending[0] if pending else None
        if head is None or head.required is None:
            return 0
        durable = {}
        for name, eng in self.engines.items():
            durable[name] = eng.wal.current_durable()
            self._note_durable(name, durable[name])
        for name, lsn in head.required.items():
            if durable[name] < lsn:
                if self.step_hook is not None:
                    self.step_hook(f"flush:{name}", head.txn)
                durable[name] = self.engines[name].wal.advance_durable()
                self.flushes += 1
                self._note_durable(name, durable[name])
        done = []
        with self._cond:
            while pending:
                head = pending[0]
                req = head.required
                if req is None:
                    break
                ready = True
                for n, lsn in req.items():
                    if durable[n] < lsn:
                        ready = False
                        break
                if not ready:
                    break
                if self.step_hook is not None:
                    self.step_hook("ack", head.txn)
                pending.popleft()
                done.append(head)
        if not done:
            return 0
        now = time.perf_counter()
        for entry in done:
            if self.history is not None:
                self.history.record(entry.txn, None, "Ack")
            entry.acked_at = now
        with self._acked:
            self._acked.notify_all()
        self.acked += len(done)
        return len(done)

    def _run(self) -> None:
        while True:
            with self._cond:
                while not self._stop and (not self._pending or self._pending[0].required is None):
                    self._cond.wait(0.05)
                if self._stop and (not self._pending or self._pending[0].required is None):
                    return
            if self.group_window > 0 and not self._stop:
                time.sleep(self.group_window)
            self.daemon_step()

    def start(self) -> "CommitQueue":
        if self._thread is None:
            self._stop = False
            self._thread = threading.Thread(target=self._run, name="commit-daemon", daemon=True)
            self._thread.start()
        return self

    def drain(self, timeout: float = 30.0) -> bool:
        """Wait until every reserved entry is acknowledged."""
        if self._thread is not None:
            with self._acked:
                return self._acked.wait_for(lambda: not self._pending, timeout)
        while self._pending:
            if self.daemon_step() == 0 and self._pending and self._pending[0].required is None:
                return False
        return True

    def stop(self) -> None:
        if self._thread is not None:
            with self._cond:
                self._stop = True
                self._cond.notify_all()
            self._thread.join()
            self._thread = None


# recovery ----------------------------------------------------------------

@dataclass
class RecoveryReport:
    committed: list = field(default_factory=list)
    suppressed: list = field(default_factory=list)
    in_flight: list = field(default_factory=list)
    aborted: list = field(default_factory=list)
    corrupt_offset: dict = field(default_factory=dict)  # engine -> byte offset or None
    cutoff_seq: Optional[int] = None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["counts"] = {k: len(d[k]) for k in ("committed", "suppressed", "in_flight", "aborted")}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class _TxnLog:
    commit_ts: Optional[int] = None
    participants: tuple = ()
    seq: Optional[int] = None  # set once the commit-end record is seen
    aborted: bool = False
    data: list = field(default_factory=list)  # (kind, table, key, value)


def _scan(buf: bytes) -> tuple[dict[int, _TxnLog], Optional[int]]:
    records, bad = decode_records(buf)
    txns: dict[int, _TxnLog] = defaultdict(_TxnLog)
    for r in records:
        t = txns[r.txn]
        if r.kind is RecordKind.COMMIT_BEGIN:
            t.commit_ts, t.participants = decode_commit_begin(r.payload)
        elif r.kind is RecordKind.COMMIT_END:
            t.seq = decode_commit_end(r.payload)
        elif r.kind is RecordKind.ABORT:
            t.aborted = True
        else:
            t.data.append((r.kind,) + decode_data(r.payload))
    return dict(txns), bad


def recover(logs: Mapping[str, bytes], engines: Optional[Mapping[str, Engine]] = None, *,
            naive: bool = False, history: Optional[History] = None) -> RecoveryReport:
    """Decide which transactions survive a crash and replay them into ``engines``.

    A transaction survives when its commit-end record is present in every
    participant's log and no earlier queue slot is missing.  Queue slots are
    handed out only to transactions that will commit, so a missing slot marks
    a transaction that may have exposed writes without finishing; everything
    after it is dropped, which is the same as truncating at the first hole.
    With ``naive`` each log is replayed on its own commit-end records only.
    """
    scans = {name: _scan(buf) for name, buf in logs.items()}
    report = RecoveryReport(corrupt_offset={n: bad for n, (_, bad) in scans.items()})
    all_txns = sorted({t for txns, _ in scans.values() for t in txns})

    keep: dict[str, set] = {name: set() for name in logs}
    if naive:
        for name, (txns, _) in scans.items():
            keep[name] = {t for t, rec in txns.items() if rec.seq is not None and not rec.aborted}
        full = set.union(*keep.values()) if keep else set()
        report.committed = sorted(full)
    else:
        complete: dict[int, int] = {}
        partial = set()
        for txn in all_txns:
            parts = None
            ends = []
            for name, (txns, _) in scans.items():
                rec = txns.get(txn)
                if rec is None:
                    continue
                if rec.participants:
                    parts = rec.participants
                if rec.seq is not None and not rec.aborted:
                    ends.append((name, rec.seq))
            if not ends:
                continue
            parts = parts or tuple(n for n, _ in ends)
            if {n for n, _ in ends} >= set(parts) and all(n in logs for n in parts):
                complete[txn] = ends[0][1]
            else:
                partial.add(txn)
        seqs = {s for s in complete.values() if s > 0}
        cutoff = 1
        while cutoff in seqs:
            cutoff += 1
        if partial or (seqs and cutoff <= max(seqs)):
            report.cutoff_seq = cutoff
        survivors = {t for t, s in complete.items() if s == 0 or s < cutoff}
        report.committed = sorted(survivors)
        report.suppressed = sorted(partial | (set(complete) - survivors))
        for name, (txns, _) in scans.items():
            keep[name] = {t for t in txns if t in survivors}
    decided = set(report.committed) | set(report.suppressed)
    for txn in all_txns:
        if txn in decided:
            continue
        recs = [txns[txn] for txns, _ in scans.values() if txn in txns]
        if any(r.aborted for r in recs):
            report.aborted.append(txn)
        elif any(r.commit_ts is not None for r in recs):
            report.in_flight.append(txn)

    if engines is not None:
        for name, (txns, _) in scans.items():
            eng = engines[name]
            for txn in sorted(keep[name], key=lambda t: txns[t].commit_ts or 0):
                rec = txns[txn]
                for kind, table, key, value in rec.data:
                    payload = None if kind is RecordKind.DELETE else value
                    eng.install(table, key, payload, rec.commit_ts, txn)
                if history is not None:
                    history.record(txn, name, "Recovered")
    return report
