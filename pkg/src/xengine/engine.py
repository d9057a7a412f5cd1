"""Toy multi-versioned storage engines.

Two flavours share one implementation:

* ``COUNTER`` engines (the fast, anchor side) take a snapshot by reading a
  timestamp counter and draw commit timestamps by incrementing it.  A
  version is visible to snapshot ``s`` iff its commit timestamp is ``<= s``.
* ``READ_VIEW`` engines (the slow side) hand out read views made of low/high
  watermarks plus the set of in-flight commit numbers.  Commit numbers come
  from the same counter the high watermark is read from.

Versions are materialized; a chain is kept oldest-to-newest internally.
"""

from __future__ import annotations

import enum
import threading
import time
from dataclasses import dataclass, field
from typing import Optional, Union

from .wal import (
    Latency,
    RecordKind,
    Wal,
    encode_commit_begin,
    encode_commit_end,
    encode_data,
)

WAIT_TIMEOUT = 5.0


class Isolation(enum.IntEnum):
    READ_COMMITTED = 1
    SNAPSHOT = 2
    SERIALIZABLE = 3

    @classmethod
    def parse(cls, text: str) -> "Isolation":
        aliases = {"rc": cls.READ_COMMITTED, "si": cls.SNAPSHOT, "ser": cls.SERIALIZABLE}
        t = text.strip().lower().replace("-", "_")
        if t in aliases:
            return aliases[t]
        try:
            return cls[t.upper()]
        except KeyError:
            raise ValueError(f"unknown isolation level {text!r}") from None


class SnapshotKind(enum.Enum):
    COUNTER = "counter"
    READ_VIEW = "read_view"


class State(enum.IntEnum):
    ACTIVE = 0
    PRE_COMMITTED = 1
    POST_COMMITTED = 2
    ABORTED = 3


class TxnAborted(Exception):
    """The enclosing transaction must roll back."""

    reason = "aborted"

    def __init__(self, msg: str = ""):
        super().__init__(msg or self.reason)


class WriteConflict(TxnAborted):
    reason = "write_conflict"


class ValidationFailed(TxnAborted):
    reason = "validation_failed"


class WaitTimeout(TxnAborted):
    reason = "wait_timeout"


@dataclass(frozen=True)
class Counter:
    ts: int

    @property
    def value(self) -> int:
        return self.ts


@dataclass(frozen=True)
class ReadView:
    low: int
    high: int
    active: frozenset = frozenset()

    def __post_init__(self):
        if self.low > self.high:
            raise ValueError(f"read view low {self.low} > high {self.high}")

    @property
    def value(self) -> int:
        return self.high


Snapshot = Union[Counter, ReadView]


def visible_in_view(view: ReadView, tid: int) -> bool:
    if tid < view.low:
        return True
    if tid >= view.high:
        return False
    return tid not in view.active


def adjust_read_view(view: ReadView, csr_high: int) -> ReadView:
    """Lower the high watermark to a registry-selected value."""
    if csr_high > view.high:
        raise ValueError(f"csr high {csr_high} is above the view's high {view.high}")
    if csr_high == view.high:
        return view
    active = frozenset(t for t in view.active if t < csr_high)
    if csr_high < view.low:
        return ReadView(csr_high, csr_high, frozenset())
    return ReadView(view.low, csr_high, active)


@dataclass(slots=True)
class Version:
    commit_ts: int
    creator: int
    payload: Optional[bytes]
    tombstone: bool = False
    owner: Optional["SubTransaction"] = None


class VersionChain:
    __slots__ = ("key", "_versions", "cond")

    def __init__(self, key: bytes):
        self.key = key
        self._versions: list[Version] = []  # oldest first
        self.cond = threading.Condition(threading.Lock())

    @property
    def versions(self) -> tuple[Version, ...]:
        """Newest first."""
        return tuple(reversed(self._versions))

    def head(self) -> Optional[Version]:
        return self._versions[-1] if self._versions else None

    def newest_committed(self) -> Optional[Version]:
        for v in reversed(self._versions):
            if v.owner is None:
                return v
        return None


@dataclass(eq=False)
class SubTransaction:
    id: int
    engine: "Engine"
    snapshot: Snapshot
    read_set: dict = field(default_factory=dict)  # (table, key) -> observed commit_ts
    write_set: dict = field(default_factory=dict)  # (table, key) -> RecordKind
    state: State = State.ACTIVE
    commit_ts: Optional[int] = None
    commit_lsn: Optional[int] = None
    resolve_in_flight: bool = False
    logged: bool = False

    def __repr__(self) -> str:
        return f"SubTransaction({self.engine.name}:{self.id} {self.state.name} ts={self.commit_ts})"


@dataclass
class EngineConfig:
    engine_id: str
    snapshot_kind: SnapshotKind
    serializable_validation: bool = False
    per_access_delay: float = 0.0
    flush_latency: Latency = 0.0

    @property
    def isolation(self) -> Isolation:
        return Isolation.SERIALIZABLE if self.serializable_validation else Isolation.SNAPSHOT


class Engine:
    def __init__(self, config: EngineConfig):
        self.config = config
        self.name = config.engine_id
        self.kind = config.snapshot_kind
        self.wal = Wal(config.flush_latency)
        self.tables: dict[str, dict[bytes, VersionChain]] = {}
        self._lock = threading.Lock()  # counter + in-flight table
        # COUNTER: last assigned commit ts.  READ_VIEW: next commit number to hand out.
        self._counter = 0 if self.kind is SnapshotKind.COUNTER else 1
        self._in_flight: set[int] = set()

    def __repr__(self) -> str:
        return f"Engine({self.name!r}, {self.kind.value})"

    # snapshots -------------------------------------------------------

    @property
    def counter(self) -> int:
        return self._counter

    def bump_counter(self, value: int) -> None:
        """Move the counter forward as if unrelated transactions had committed."""
        with self._lock:
            if value < self._counter:
                raise ValueError("counters never move backwards")
            self._counter = value

    def latest_value(self) -> int:
        """Scalar of the freshest snapshot (counter value or high watermark)."""
        return self._counter

    def latest_snapshot(self) -> Snapshot:
        if self.kind is SnapshotKind.COUNTER:
            return Counter(self._counter)
        with self._lock:
            high = self._counter
            active = frozenset(self._in_flight)
        return ReadView(min(active, default=high), high, active)

    def snapshot_of_value(self, value: int) -> Snapshot:
        """Snapshot for a registry-selected scalar."""
        if self.kind is SnapshotKind.COUNTER:
            return Counter(value)
        return adjust_read_view(self.latest_snapshot(), value)

    def point(self, commit_ts: int) -> int:
        """Smallest snapshot scalar that sees a commit stamped ``commit_ts`` (0 = none)."""
        if commit_ts == 0 or self.kind is SnapshotKind.COUNTER:
            return commit_ts
        return commit_ts + 1

    def commit_point(self, sub: SubTransaction) -> int:
        return self.point(sub.commit_ts or 0)

    # lifecycle -------------------------------------------------------

    def begin_sub(self, txn_id: int, imposed: Optional[Snapshot] = None, *,
                  resolve_in_flight: bool = False) -> SubTransaction:
        if imposed is None:
            snap = self.latest_snapshot()
        else:
            want = Counter if self.kind is SnapshotKind.COUNTER else ReadView
            if not isinstance(imposed, want):
                raise TypeError(f"{self.name} needs a {want.__name__} snapshot")
            snap = imposed
        return SubTransaction(txn_id, self, snap, resolve_in_flight=resolve_in_flight)

    def refresh(self, sub: SubTransaction, snapshot: Snapshot) -> None:
        sub.snapshot = snapshot

    def _chain(self, table: str, key: bytes) -> VersionChain:
        t = self.tables.get(table)
        if t is None:
            t = self.tables.setdefault(table, {})
        c = t.get(key)
        if c is None:
            c = t.setdefault(key, VersionChain(key))
        return c

    def _sees(self, sub: SubTransaction, ts: int) -> bool:
        snap = sub.snapshot
        if isinstance(snap, Counter):
            return ts <= snap.ts
        if sub.resolve_in_flight:
            return ts < snap.high
        return visible_in_view(snap, ts)

    def _visible(self, sub: SubTransaction, chain: VersionChain) -> Optional[Version]:
        """Caller holds ``chain.cond``.  Waits out pre-committed versions the snapshot would see."""
        while True:
            pending = None
            for v in reversed(chain._versions):
                if v.owner is None:
                    if self._sees(sub, v.commit_ts):
                        return v
                    continue
                if v.owner is sub:
                    return v
                o = v.owner
                if o.state is State.PRE_COMMITTED and self._sees(sub, o.commit_ts):
                    pending = v
                    break
            if pending is None:
                return None
            if not chain.cond.wait(WAIT_TIMEOUT):
                raise WaitTimeout(f"{self.name}: in-flight commit never resolved")

    def read(self, sub: SubTransaction, table: str, key: bytes) -> Optional[bytes]:
        assert sub.state is State.ACTIVE, sub
        if self.config.per_access_delay:
            time.sleep(self.config.per_access_delay)
        chain = self._chain(table, key)
        with chain.cond:
            v = self._visible(sub, chain)
        if v is None or v.owner is sub:
            ts = 0 if v is None else -1
        else:
            ts = v.commit_ts
        if ts >= 0:
            sub.read_set.setdefault((table, key), ts)
        if v is None or v.tombstone:
            return None
        return v.payload

    def observed(self, sub: SubTransaction, table: str, key: bytes) -> int:
        """Commit stamp of the version ``sub`` saw on its first read (-1 for own write)."""
        return sub.read_set.get((table, key), -1)

    def write(self, sub: SubTransaction, table: str, key: bytes, payload: Optional[bytes]) -> None:
        """``payload=None`` writes a tombstone."""
        assert sub.state is State.ACTIVE, sub
        if self.config.per_access_delay:
            time.sleep(self.config.per_access_delay)
        chain = self._chain(table, key)
        with chain.cond:
            head = chain.head()
            if head is not None and head.owner is sub:
                head.payload = payload
                head.tombstone = payload is None
                if payload is None:
                    sub.write_set[(table, key)] = RecordKind.DELETE
                return
            if head is not None and head.owner is not None:
                raise WriteConflict(f"{self.name}: {table}/{key!r} has an uncommitted owner")
            if head is not None and not self._sees(sub, head.commit_ts):
                raise WriteConflict(f"{self.name}: {table}/{key!r} changed after the snapshot")
            chain._versions.append(Version(0, sub.id, payload, payload is None, sub))
        if payload is None:
            kind = RecordKind.DELETE
        elif head is None or head.tombstone:
            kind = RecordKind.INSERT
        else:
            kind = RecordKind.UPDATE
        sub.write_set[(table, key)] = kind

    def pre_commit(self, sub: SubTransaction, participants: tuple[str, ...] = ()) -> int:
        """Assign a commit timestamp; with validation on, fail on any anti-dependency."""
        assert sub.state is State.ACTIVE, sub
        with self._lock:
            if self.kind is SnapshotKind.COUNTER:
                self._counter += 1
                ts = self._counter
            else:
                ts = self._counter
                self._counter += 1
                self._in_flight.add(ts)
            sub.commit_ts = ts
            sub.state = State.PRE_COMMITTED
        # Stamp first, then validate: any overwriter that pre-commits later gets a larger stamp.
        if self.config.serializable_validation:
            for (table, key), seen in sub.read_set.items():
                chain = self._chain(table, key)
                with chain.cond:
                    for v in reversed(chain._versions):
                        if v.owner is None:
                            newest = v.commit_ts
                            break
                        o = v.owner
                        if o is not sub and o.state is State.PRE_COMMITTED and o.commit_ts < ts:
                            self._retire(sub)
                            raise ValidationFailed(f"{self.name}: {table}/{key!r} overwritten by an earlier committer")
                    else:
                        newest = 0
                if newest != seen:
                    self._retire(sub)
                    raise ValidationFailed(f"{self.name}: {table}/{key!r} overwritten since read")
        sub.logged = True
        self.wal.append(RecordKind.COMMIT_BEGIN, sub.id, encode_commit_begin(ts, participants or (self.name,)))
        return ts

    def _retire(self, sub: SubTransaction) -> None:
        # A failed validation leaves the sub pre-committed with no log record yet; roll it back here.
        self.abort_sub(sub)

    def post_commit(self, sub: SubTransaction, queue_seq: int = 0) -> int:
        """Make writes visible and log them; returns the end LSN of the commit-end record."""
        assert sub.state is State.PRE_COMMITTED, sub
        ts = sub.commit_ts
        for (table, key), kind in sub.write_set.items():
            chain = self.tables[table][key]
            v = chain.head()
            self.wal.append(kind, sub.id, encode_data(table, key, None if v.tombstone else v.payload))
        lsn = self.wal.append(RecordKind.COMMIT_END, sub.id, encode_commit_end(queue_seq))
        for (table, key) in sub.write_set:
            chain = self.tables[table][key]
            with chain.cond:
                v = chain.head()
                v.commit_ts = ts
                v.owner = None
                chain.cond.notify_all()
        with self._lock:
            self._in_flight.discard(ts)
        sub.state = State.POST_COMMITTED
        sub.commit_lsn = lsn + 1
        return sub.commit_lsn

    def abort_sub(self, sub: SubTransaction) -> None:
        if sub.state in (State.ABORTED, State.POST_COMMITTED):
            return
        for (table, key) in sub.write_set:
            chain = self.tables[table][key]
            with chain.cond:
                if chain._versions and chain._versions[-1].owner is sub:
                    chain._versions.pop()
                chain.cond.notify_all()
        if sub.state is State.PRE_COMMITTED:
            with self._lock:
                self._in_flight.discard(sub.commit_ts)
        if sub.logged:
            self.wal.append(RecordKind.ABORT, sub.id)
        sub.state = State.ABORTED

    # inspection ------------------------------------------------------

    def committed_value(self, table: str, key: bytes) -> Optional[bytes]:
        chain = self.tables.get(table, {}).get(key)
        if chain is None:
            return None
        with chain.cond:
            v = chain.newest_committed()
        return None if v is None or v.tombstone else v.payload

    def committed_state(self) -> dict[tuple[str, bytes], tuple[int, bytes]]:
        """Newest committed, non-deleted version per key: (commit_ts, payload)."""
        out = {}
        for table, chains in self.tables.items():
            for key, chain in list(chains.items()):
                with chain.cond:
                    v = chain.newest_committed()
                if v is not None and not v.tombstone:
                    out[(table, key)] = (v.commit_ts, v.payload)
        return out

    def install(self, table: str, key: bytes, payload: Optional[bytes], commit_ts: int, creator: int = 0) -> None:
        """Load a committed version directly (bulk load and recovery replay)."""
        chain = self._chain(table, key)
        with chain.cond:
            chain._versions.append(Version(commit_ts, creator, payload, payload is None))
        with self._lock:
            if self.kind is SnapshotKind.COUNTER:
                self._counter = max(self._counter, commit_ts)
            else:
                self._counter = max(self._counter, commit_ts + 1)


def make_engine(engine_id: str, kind: SnapshotKind, **kw) -> Engine:
    return Engine(EngineConfig(engine_id, kind, **kw))


__all__ = [
    "Counter", "Engine", "EngineConfig", "Isolation", "ReadView", "Snapshot", "SnapshotKind",
    "State", "SubTransaction", "TxnAborted", "ValidationFailed", "Version", "VersionChain",
    "WaitTimeout", "WriteConflict", "adjust_read_view", "make_engine", "visible_in_view",
]
