"""Deterministic interleavings that expose cross-engine anomalies.

Each scenario runs twice: once with raw, uncoordinated sub-transactions and
once through the coordinator.  The verdict passes when the raw run shows the
anomaly and the coordinated run shows none.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

from . import oracle
from .coordinator import Coordinator, Crash
from .engine import Engine, Isolation, SnapshotKind, TxnAborted, make_engine
from .history import History
from .pipeline import CommitQueue, recover


class UnknownScenario(KeyError):
    pass


@dataclass
class VerdictReport:
    name: str
    disabled: dict = field(default_factory=dict)  # finding name -> count
    enabled: dict = field(default_factory=dict)
    anomaly: str = ""
    notes: list = field(default_factory=list)

    @property
    def detected(self) -> bool:
        return self.disabled.get(self.anomaly, 0) > 0

    @property
    def prevented(self) -> bool:
        return not any(self.enabled.values())

    @property
    def passed(self) -> bool:
        return self.detected and self.prevented

    def lines(self) -> list[str]:
        out = [f"scenario {self.name}: anomaly={self.anomaly}"]
        out.append(f"  disabled: {_fmt_counts(self.disabled)} -> {'detected' if self.detected else 'NOT detected'}")
        out.append(f"  enabled:  {_fmt_counts(self.enabled)} -> {'none' if self.prevented else 'ANOMALY'}")
        out.extend(f"  {n}" for n in self.notes)
        out.append(f"  verdict: {'PASS' if self.passed else 'FAIL'}")
        return out

    def to_dict(self) -> dict:
        return {"name": self.name, "anomaly": self.anomaly, "disabled": self.disabled,
                "enabled": self.enabled, "notes": self.notes, "passed": self.passed}


def _fmt_counts(d: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in sorted(d.items())) or "-"


def _engines(serializable: bool = False) -> tuple[Engine, Engine]:
    a = make_engine("anchor", SnapshotKind.COUNTER, serializable_validation=serializable)
    p = make_engine("peer", SnapshotKind.READ_VIEW, serializable_validation=serializable)
    return a, p


def _setup(coordinated: bool, serializable: bool = False):
    anchor, peer = _engines(serializable)
    for eng in (anchor, peer):
        for k in (b"x", b"y"):
            eng.install("t", k, b"0", 1)
    history = History()
    queue = CommitQueue({anchor.name: anchor, peer.name: peer}, history) if coordinated else None
    iso = Isolation.SERIALIZABLE if serializable else Isolation.SNAPSHOT
    coord = Coordinator(anchor, peer, isolation=iso, coordinated=coordinated, pipeline=queue, history=history)
    return coord, history


def _commit(coord: Coordinator, txn) -> bool:
    try:
        coord.commit(txn)
    except TxnAborted:
        return False
    if coord.pipeline is not None:
        coord.pipeline.drain()
    return True


def _findings(history: History) -> dict:
    r = oracle.check_all(history.events)
    return {k: len(v) for k, v in r.items()}


def cross_snapshot(coordinated: bool) -> tuple[dict, list[str]]:
    """Two transactions enter the engines in opposite orders while both counters move."""
    coord, h = _setup(coordinated)
    coord.anchor.bump_counter(1000)
    coord.peer.bump_counter(100)
    s = coord.begin()
    t = coord.begin()
    coord.read(s, "anchor", "t", b"x")
    coord.read(t, "peer", "t", b"y")
    coord.anchor.bump_counter(3000)
    coord.read(t, "anchor", "t", b"x")
    coord.peer.bump_counter(200)
    coord.read(s, "peer", "t", b"y")
    _commit(coord, s)
    _commit(coord, t)
    snaps = {x.id: (x.anchor_sub.snapshot.value, x.peer_sub.snapshot.value) for x in (s, t)}
    return _findings(h), [f"{'enabled' if coordinated else 'disabled'} snapshots S={snaps[s.id]} T={snaps[t.id]}"]


def serial_concurrent(coordinated: bool) -> tuple[dict, list[str]]:
    """A reader enters the peer before a cross-engine commit and the anchor after it."""
    coord, h = _setup(coordinated)
    coord.anchor.bump_counter(3999)
    coord.peer.bump_counter(250)
    t = coord.begin()
    coord.write(t, "anchor", "t", b"x", b"1")
    coord.write(t, "peer", "t", b"y", b"1")
    u = coord.begin()
    coord.read(u, "peer", "t", b"y")
    _commit(coord, t)
    x = coord.read(u, "anchor", "t", b"x")
    y = coord.read(u, "peer", "t", b"y")
    _commit(coord, u)
    note = (f"{'enabled' if coordinated else 'disabled'} T commits at anchor {t.anchor_sub.commit_ts}; "
            f"U snapshots {(u.anchor_sub.snapshot.value, u.peer_sub.snapshot.value)} read x={x!r} y={y!r}")
    return _findings(h), [note]


def write_skew(coordinated: bool) -> tuple[dict, list[str]]:
    """Each transaction reads both rows and writes one; the pair is not serializable."""
    coord, h = _setup(coordinated, serializable=coordinated)
    t1 = coord.begin()
    t2 = coord.begin()
    for t in (t1, t2):
        coord.read(t, "anchor", "t", b"x")
        coord.read(t, "peer", "t", b"y")
    coord.write(t1, "anchor", "t", b"x", b"1")
    coord.write(t2, "peer", "t", b"y", b"1")
    ok2 = _commit(coord, t2)
    ok1 = _commit(coord, t1)
    label = "enabled+serializable" if coordinated else "disabled+SI"
    return _findings(h), [f"{label}: T1 {'committed' if ok1 else 'aborted'}, T2 {'committed' if ok2 else 'aborted'}"]


# crash sweep -------------------------------------------------------------

def _crash_run(crash_at: int | None, coordinated: bool):
    """Run a committed warm-up transaction and then one cross-engine transaction, crashing at step ``crash_at``."""
    anchor, peer = _engines()
    history = History()
    steps: list[str] = []

    def hook(name: str, txn: int) -> None:
        if txn == target[0]:
            if crash_at is not None and len(steps) == crash_at:
                raise Crash(name)
            steps.append(name)

    target = [None]
    queue = CommitQueue({anchor.name: anchor, peer.name: peer}, history, step_hook=hook)
    coord = Coordinator(anchor, peer, coordinated=coordinated, pipeline=queue, history=history, step_hook=hook)
    warm = coord.begin()
    coord.write(warm, "anchor", "t", b"w", b"warm")
    coord.write(warm, "peer", "t", b"w", b"warm")
    coord.commit(warm)
    queue.drain()
    t = coord.begin()
    target[0] = t.id
    coord.write(t, "anchor", "t", b"x", b"new")
    coord.write(t, "peer", "t", b"y", b"new")
    crashed = False
    try:
        coord.commit(t)
        if coordinated:
            while len(queue):
                queue.daemon_step()
        hook("done", t.id)
    except Crash:
        crashed = True
    return anchor, peer, history, steps, crashed, (warm.id, t.id)


def _prefixes(eng: Engine) -> list[bytes]:
    """Every crash image: the durable prefix plus any longer record-aligned prefix."""
    ends = eng.wal._ends
    lo = eng.wal.durable_lsn - 1
    buf = eng.wal.buffer()
    return [buf[: ends[i]] for i in range(lo, len(ends))]


def crash_sweep(coordinated: bool) -> tuple[dict, list[str]]:
    _, _, _, steps, _, _ = _crash_run(None, coordinated)
    total = violations = lost = 0
    for point in range(len(steps)):
        anchor, peer, history, _, crashed, (warm_id, tid) = _crash_run(point, coordinated)
        acked = {e.txn for e in history.events if e.kind == "Ack"}
        for a_img, p_img in itertools.product(_prefixes(anchor), _prefixes(peer)):
            total += 1
            fresh_a, fresh_p = _engines()
            recover({"anchor": a_img, "peer": p_img}, {"anchor": fresh_a, "peer": fresh_p}, naive=not coordinated)
            x = fresh_a.committed_value("t", b"x") == b"new"
            y = fresh_p.committed_value("t", b"y") == b"new"
            if x != y:
                violations += 1
            for txn, keys in ((warm_id, (b"w", b"w")), (tid, (b"x", b"y"))):
                present = (fresh_a.committed_value("t", keys[0]) is not None
                           and fresh_p.committed_value("t", keys[1]) is not None)
                if txn in acked and not present:
                    lost += 1
    findings = {"partial_survival": violations, "lost_ack": lost}
    note = f"{'enabled' if coordinated else 'disabled'}: {len(steps)} crash points, {total} crash images"
    return findings, [note, "steps: " + " > ".join(steps)]


SCENARIOS: dict[str, tuple[Callable, str]] = {
    "cross-snapshot": (cross_snapshot, "snapshot_skew"),
    "serial-concurrent": (serial_concurrent, "serial_concurrent"),
    "write-skew": (write_skew, "serializable"),
    "crash-sweep": (crash_sweep, "partial_survival"),
}


def run_scenario(name: str) -> VerdictReport:
    try:
        fn, anomaly = SCENARIOS[name]
    except KeyError:
        raise UnknownScenario(name) from None
    off, notes_off = fn(False)
    on, notes_on = fn(True)
    return VerdictReport(name, off, on, anomaly, notes_off + notes_on)
