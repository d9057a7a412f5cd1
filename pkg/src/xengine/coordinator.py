"""Cross-engine transactions over an anchor (counter) engine and a peer (read view) engine."""

from __future__ import annotations

import enum
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional

from .csr import CsrRegistry
from .engine import Counter, Engine, Isolation, SnapshotKind, SubTransaction, TxnAborted
from .history import History


class ConfigError(ValueError):
    pass


class CsrRejected(TxnAborted):
    reason = "csr_rejected"

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class Crash(Exception):
    """Raised by a step hook to simulate a process crash at that point."""


class TxnState(enum.Enum):
    ACTIVE = "active"
    COMMITTING = "committing"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass(eq=False)
class GlobalTransaction:
    id: int
    isolation: Isolation
    anchor_sub: Optional[SubTransaction] = None
    peer_sub: Optional[SubTransaction] = None
    anchor_snapshot: Optional[int] = None
    engines_accessed: set = field(default_factory=set)
    state: TxnState = TxnState.ACTIVE
    ticket: Optional[object] = None
    abort_reason: Optional[str] = None

    @property
    def subs(self) -> list[SubTransaction]:
        return [s for s in (self.anchor_sub, self.peer_sub) if s is not None]

    @property
    def cross_engine(self) -> bool:
        return self.anchor_sub is not None and self.peer_sub is not None


class LiveTable:
    """Anchor snapshots of running transactions."""

    def __init__(self, anchor: Engine):
        self._anchor = anchor
        self._lock = threading.Lock()
        self.live: dict[int, int] = {}

    def register(self, txn_id: int) -> int:
        # Reading the counter under the same lock as min_snapshot keeps recycling from
        # racing past a transaction that has read its snapshot but is not yet listed.
        with self._lock:
            snap = self._anchor.latest_value()
            self.live.setdefault(txn_id, snap)
            return snap

    def remove(self, txn_id: int) -> None:
        with self._lock:
            self.live.pop(txn_id, None)

    def min_snapshot(self) -> int:
        with self._lock:
            if self.live:
                return min(self.live.values())
            return self._anchor.latest_value()

    def __len__(self) -> int:
        return len(self.live)


class Coordinator:
    """Runs global transactions across two engines.

    With ``coordinated=False`` the engines run side by side with independent
    snapshots and no registry or commit queue; that mode exists to reproduce
    the anomalies the coordinated mode prevents.
    """

    def __init__(self, anchor: Engine, peer: Engine, *, isolation: Isolation = Isolation.SNAPSHOT,
                 coordinated: bool = True, csr: Optional[CsrRegistry] = None, pipeline=None,
                 history: Optional[History] = None, step_hook: Optional[Callable[[str, int], None]] = None,
                 csr_capacity: int = 1000, gc_threshold: int = 5000):
        if anchor.kind is not SnapshotKind.COUNTER or peer.kind is not SnapshotKind.READ_VIEW:
            raise ConfigError("anchor must be a counter engine and peer a read-view engine")
        ceiling = min(anchor.config.isolation, peer.config.isolation)
        if isolation > ceiling:
            raise ConfigError(f"isolation {isolation.name} exceeds what the engines provide ({ceiling.name})")
        self.anchor = anchor
        self.peer = peer
        self.engines = {anchor.name: anchor, peer.name: peer}
        self.isolation = isolation
        self.coordinated = coordinated
        self.live = LiveTable(anchor)
        if coordinated and csr is None:
            csr = CsrRegistry(csr_capacity, gc_threshold)
        if csr is not None and csr.min_active_anchor is None:
            csr.min_active_anchor = self.live.min_snapshot
        self.csr = csr
        self.pipeline = pipeline if coordinated else None
        self.history = history
        self.step_hook = step_hook
        self._ids = itertools.count(1)

    # helpers ---------------------------------------------------------

    def _rec(self, txn: int, engine: Optional[str], kind: str, *args) -> None:
        if self.history is not None:
            self.history.record(txn, engine, kind, *args)

    def _step(self, name: str, txn: GlobalTransaction, engine: Optional[Engine] = None) -> None:
        if self.step_hook is not None:
            self.step_hook(name if engine is None else f"{name}:{engine.name}", txn.id)

    def _fail(self, txn: GlobalTransaction, exc: TxnAborted) -> None:
        self._rollback(txn, exc.reason)
        raise exc

    def _rollback(self, txn: GlobalTransaction, reason: str) -> None:
        for sub in txn.subs:
            sub.engine.abort_sub(sub)
        txn.state = TxnState.ABORTED
        txn.abort_reason = reason
        self.live.remove(txn.id)
        self._rec(txn.id, None, "Abort", reason)

    # lifecycle -------------------------------------------------------

    def begin(self, isolation: Optional[Isolation] = None) -> GlobalTransaction:
        iso = self.isolation if isolation is None else isolation
        if iso > self.isolation:
            raise ConfigError(f"isolation {iso.name} exceeds the configured {self.isolation.name}")
        tid = next(self._ids)  # itertools.count is atomic under the GIL
        if self.history is not None:
            self._rec(tid, None, "Start", iso.name)
        return GlobalTransaction(tid, iso)

    def _anchor_snapshot(self, txn: GlobalTransaction) -> int:
        if txn.anchor_snapshot is None:
            txn.anchor_snapshot = self.live.register(txn.id)
            self._rec(txn.id, self.anchor.name, "Begin", txn.anchor_snapshot)
        elif txn.isolation is Isolation.READ_COMMITTED:
            txn.anchor_snapshot = self.anchor.latest_value()
        return txn.anchor_snapshot

    def _peer_snapshot(self, txn: GlobalTransaction, anchor_snap: int):
        dec = self.csr.select_snapshot(anchor_snap, self.peer.latest_value)
        self._rec(txn.id, None, "CsrSelect", anchor_snap, dec.value)
        if not dec.accepted:
            self._fail(txn, CsrRejected(dec.reason))
        return self.peer.snapshot_of_value(dec.value)

    def _sub_for(self, txn: GlobalTransaction, engine: Engine) -> SubTransaction:
        is_anchor = engine is self.anchor
        sub = txn.anchor_sub if is_anchor else txn.peer_sub
        rc = txn.isolation is Isolation.READ_COMMITTED
        if not self.coordinated:
            if sub is None:
                sub = engine.begin_sub(txn.id)
                self._rec(txn.id, engine.name, "Begin", sub.snapshot.value)
            elif rc:
                engine.refresh(sub, engine.latest_snapshot())
        elif sub is None or rc:
            a = self._anchor_snapshot(txn)
            if is_anchor:
                snap = Counter(a)
            else:
                snap = self._peer_snapshot(txn, a)
            if sub is None:
                sub = engine.begin_sub(txn.id, snap, resolve_in_flight=not is_anchor)
                if not is_anchor:
                    self._rec(txn.id, engine.name, "Begin", snap.value)
            else:
                engine.refresh(sub, snap)
        if is_anchor:
            txn.anchor_sub = sub
        else:
            txn.peer_sub = sub
        txn.engines_accessed.add(engine.name)
        return sub

    def _enter(self, txn: GlobalTransaction, engine: str) -> tuple[Engine, SubTransaction]:
        if txn.state is not TxnState.ACTIVE:
            raise TxnAborted(f"transaction {txn.id} is {txn.state.value}")
        eng = self.engines.get(engine)
        if eng is None:
            raise ConfigError(f"unknown engine {engine!r}")
        sub = txn.anchor_sub if eng is self.anchor else txn.peer_sub
        if sub is None or txn.isolation is Isolation.READ_COMMITTED:
            try:
                sub = self._sub_for(txn, eng)
            except TxnAborted as exc:
                self._fail(txn, exc)
        return eng, sub

    def read(self, txn: GlobalTransaction, engine: str, table: str, key: bytes) -> Optional[bytes]:
        eng, sub = self._enter(txn, engine)
        try:
            value = eng.read(sub, table, key)
        except TxnAborted as exc:
            self._fail(txn, exc)
        if self.history is not None:
            seen = eng.observed(sub, table, key)
            self._rec(txn.id, eng.name, "Read", table, key, eng.point(seen) if seen >= 0 else -1)
        return value

    def write(self, txn: GlobalTransaction, engine: str, table: str, key: bytes, payload: Optional[bytes]) -> None:
        """``payload=None`` deletes the row."""
        eng, sub = self._enter(txn, engine)
        try:
            eng.write(sub, table, key, payload)
        except TxnAborted as exc:
            self._fail(txn, exc)
        if self.history is not None:
            self._rec(txn.id, eng.name, "Write", table, key)

    def access(self, txn: GlobalTransaction, engine: str, op: str, table: str, key: bytes,
               payload: Optional[bytes] = None):
        if op == "read":
            return self.read(txn, engine, table, key)
        if op == "write":
            return self.write(txn, engine, table, key, payload)
        raise ValueError(f"unknown access kind {op!r}")

    def abort(self, txn: GlobalTransaction) -> None:
        if txn.state is TxnState.ACTIVE:
            self._rollback(txn, "client")

    def commit(self, txn: GlobalTransaction):
        """Commit and hand off to the commit queue; returns the ticket (None without a queue)."""
        if txn.state is not TxnState.ACTIVE:
            raise TxnAborted(f"transaction {txn.id} is {txn.state.value}")
        txn.state = TxnState.COMMITTING
        subs = txn.subs
        participants = tuple(s.engine.name for s in subs)
        hook = self.step_hook  # checked inline; this path runs once per transaction
        try:
            for sub in subs:
                if hook is not None:
                    hook(f"pre_commit:{sub.engine.name}", txn.id)
                sub.engine.pre_commit(sub, participants)
                if self.history is not None:
                    self._rec(txn.id, sub.engine.name, "PreCommit", sub.engine.commit_point(sub))
            if self.coordinated and txn.peer_sub is not None:
                self._step("commit_check", txn)
                if txn.anchor_sub is not None:
                    key, equal_sees = txn.anchor_sub.commit_ts, True
                else:
                    key, equal_sees = txn.anchor_snapshot, False
                value = self.peer.commit_point(txn.peer_sub)
                dec = self.csr.commit_check(key, value, equal_key_sees=equal_sees)
                self._rec(txn.id, None, "CsrCommitCheck", key, value, dec.accepted)
                if not dec.accepted:
                    raise CsrRejected(dec.reason)
        except TxnAborted as exc:
            self._fail(txn, exc)
        entry = None
        if self.pipeline is not None and subs:
            if hook is not None:
                hook("reserve", txn.id)
            entry = self.pipeline.reserve(txn.id)
        seq = entry.seq if entry is not None else 0
        required = {}
        for sub in subs:
            if hook is not None:
                hook(f"post_commit:{sub.engine.name}", txn.id)
            required[sub.engine.name] = sub.engine.post_commit(sub, seq)
            if self.history is not None:
                self._rec(txn.id, sub.engine.name, "PostCommit", sub.commit_lsn)
        txn.state = TxnState.COMMITTED
        self.live.remove(txn.id)
        if entry is not None:
            if hook is not None:
                hook("publish", txn.id)
            self.pipeline.publish(entry, required)
            txn.ticket = entry
        else:
            self._rec(txn.id, None, "Ack")
        return txn.ticket
