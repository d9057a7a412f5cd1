"""Globally ordered event history and its text trace format.

All timestamps carried by events are snapshot scalars in a uniform,
inclusive space per engine: a commit with point ``c`` is visible to a
snapshot ``s`` of the same engine iff ``c <= s``.
"""

from __future__ import annotations

import itertools
import threading
from typing import IO, Iterable, Iterator, NamedTuple, Optional

# kind -> positional field names
KINDS: dict[str, tuple[str, ...]] = {
    "Start": ("isolation",),
    "Begin": ("ts",),
    "Read": ("table", "key", "version"),
    "Write": ("table", "key"),
    "PreCommit": ("ts",),
    "PostCommit": ("lsn",),
    "CsrSelect": ("inp", "out"),
    "CsrCommitCheck": ("inp", "out", "accepted"),
    "Ack": (),
    "Abort": ("reason",),
    "Durable": ("lsn",),
    "Crash": (),
    "Recovered": (),
}


class HistoryEvent(NamedTuple):
    seq: int
    txn: int
    engine: Optional[str]
    kind: str
    args: tuple = ()

    def get(self, name: str):
        return self.args[KINDS[self.kind].index(name)]

    def to_line(self) -> str:
        parts = [f"seq={self.seq}", f"txn={self.txn}", f"engine={self.engine or '-'}", f"kind={self.kind}"]
        for name, val in zip(KINDS[self.kind], self.args):
            parts.append(f"{name}={_fmt(val)}")
        return " ".join(parts)

    @classmethod
    def from_line(cls, line: str) -> "HistoryEvent":
        fields = dict(tok.split("=", 1) for tok in line.split())
        kind = fields["kind"]
        if kind not in KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        engine = fields["engine"]
        args = tuple(_parse(name, fields[name]) for name in KINDS[kind])
        return cls(int(fields["seq"]), int(fields["txn"]), None if engine == "-" else engine, kind, args)


def _fmt(val) -> str:
    if isinstance(val, bytes):
        return "x" + val.hex()
    if isinstance(val, bool):
        return "1" if val else "0"
    if val is None:
        return "-"
    return str(val)


def _parse(name: str, text: str):
    if text == "-":
        return None
    if name == "key":
        return bytes.fromhex(text[1:])
    if name in ("table", "reason", "isolation"):
        return text
    if name == "accepted":
        return text == "1"
    return int(text)


class History:
    """Thread-safe append-only event log."""

    def __init__(self):
        self._lock = threading.Lock()
        self._seq = itertools.count(1)
        self.events: list[HistoryEvent] = []

    def record(self, txn: int, engine: Optional[str], kind: str, *args) -> None:
        with self._lock:
            self.events.append(HistoryEvent(next(self._seq), txn, engine, kind, args))

    def __iter__(self) -> Iterator[HistoryEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def write(self, fh: IO[str]) -> None:
        for ev in self.events:
            fh.write(ev.to_line())
            fh.write("\n")

    def save(self, path) -> None:
        with open(path, "w") as fh:
            self.write(fh)

    @classmethod
    def from_events(cls, events: Iterable[HistoryEvent]) -> "History":
        h = cls()
        h.events = sorted(events, key=lambda e: e.seq)
        if h.events:
            h._seq = itertools.count(h.events[-1].seq + 1)
        return h

    @classmethod
    def load(cls, path) -> "History":
        with open(path) as fh:
            return cls.from_events(HistoryEvent.from_line(l) for l in fh if l.strip())
