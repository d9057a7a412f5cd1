"""Write-ahead log with a simulated durable frontier.

Records are framed as ``u32 length | u8 kind | u64 lsn | u64 txn | payload``
where ``length`` counts every byte after the length field.  The in-memory
log keeps exactly that byte layout so a crash can be simulated by keeping
only the durable prefix of the buffer.
"""

from __future__ import annotations

import enum
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterator, Union

_HEADER = struct.Struct("<BQQ")
_LEN = struct.Struct("<I")

Latency = Union[float, Callable[[], float]]


class RecordKind(enum.IntEnum):
    INSERT = 1
    UPDATE = 2
    DELETE = 3
    COMMIT_BEGIN = 4
    COMMIT_END = 5
    ABORT = 6


class CorruptLog(Exception):
    def __init__(self, offset: int, why: str = "bad framing"):
        super().__init__(f"corrupt log record at byte {offset}: {why}")
        self.offset = offset


@dataclass(frozen=True)
class LogRecord:
    lsn: int
    kind: RecordKind
    txn: int
    payload: bytes = b""

    def encode(self) -> bytes:
        body = _HEADER.pack(int(self.kind), self.lsn, self.txn) + self.payload
        return _LEN.pack(len(body)) + body


def decode_records(buf: bytes, strict: bool = False) -> tuple[list[LogRecord], int | None]:
    """Parse the valid prefix of ``buf``.

    Returns the records and the byte offset of the first invalid record
    (``None`` when the whole buffer parsed).  With ``strict`` a framing
    error raises :class:`CorruptLog` instead.
    """
    records: list[LogRecord] = []
    off = 0
    prev_lsn = 0
    n = len(buf)
    while off < n:
        bad = None
        if off + _LEN.size > n:
            bad = "truncated length"
        else:
            (length,) = _LEN.unpack_from(buf, off)
            end = off + _LEN.size + length
            if length < _HEADER.size:
                bad = "length shorter than header"
            elif end > n:
                bad = "truncated record"
            else:
                kind, lsn, txn = _HEADER.unpack_from(buf, off + _LEN.size)
                if kind not in RecordKind._value2member_map_:
                    bad = f"unknown kind {kind}"
                elif lsn <= prev_lsn:
                    bad = f"non-increasing lsn {lsn}"
        if bad is not None:
            if strict:
                raise CorruptLog(off, bad)
            return records, off
        payload = bytes(buf[off + _LEN.size + _HEADER.size:end])
        records.append(LogRecord(lsn, RecordKind(kind), txn, payload))
        prev_lsn = lsn
        off = end
    return records, None


# Payload helpers ---------------------------------------------------------

def _pack_bytes(b: bytes) -> bytes:
    return _LEN.pack(len(b)) + b


def _unpack_bytes(buf: bytes, off: int) -> tuple[bytes, int]:
    (n,) = _LEN.unpack_from(buf, off)
    off += _LEN.size
    return bytes(buf[off:off + n]), off + n


def encode_data(table: str, key: bytes, value: bytes | None) -> bytes:
    return _pack_bytes(table.encode()) + _pack_bytes(key) + _pack_bytes(value or b"")


def decode_data(payload: bytes) -> tuple[str, bytes, bytes]:
    table, off = _unpack_bytes(payload, 0)
    key, off = _unpack_bytes(payload, off)
    value, _ = _unpack_bytes(payload, off)
    return table.decode(), key, value


def encode_commit_begin(commit_ts: int, participants: tuple[str, ...]) -> bytes:
    return struct.pack("<Q", commit_ts) + _pack_bytes(",".join(participants).encode())


def decode_commit_begin(payload: bytes) -> tuple[int, tuple[str, ...]]:
    (ts,) = struct.unpack_from("<Q", payload, 0)
    names, _ = _unpack_bytes(payload, 8)
    return ts, tuple(n for n in names.decode().split(",") if n)


def encode_commit_end(queue_seq: int) -> bytes:
    return struct.pack("<Q", queue_seq)


def decode_commit_end(payload: bytes) -> int:
    return struct.unpack_from("<Q", payload, 0)[0] if payload else 0


class Wal:
    """Append-only log; ``durable_lsn`` is an exclusive frontier.

    Every record with ``lsn < durable_lsn`` survives a crash.
    """

    def __init__(self, flush_latency: Latency = 0.0):
        self._lock = threading.Lock()
        self._flush_lock = threading.Lock()
        self._buf = bytearray()
        self._ends: list[int] = [0]  # _ends[i] = byte offset after record with lsn i
        self.next_lsn = 1
        self.durable_lsn = 1
        self.flush_latency = flush_latency
        self.flushes = 0

    def append(self, kind: RecordKind, txn: int, payload: bytes = b"") -> int:
        with self._lock:
            lsn = self.next_lsn
            self._buf += LogRecord(lsn, kind, txn, payload).encode()
            self._ends.append(len(self._buf))
            self.next_lsn = lsn + 1
            return lsn

    def current_durable(self) -> int:
        return self.durable_lsn

    def advance_durable(self) -> int:
        """Flush everything appended before the call; concurrent appends wait for the next flush."""
        with self._flush_lock:
            with self._lock:
                target = self.next_lsn
            delay = self.flush_latency() if callable(self.flush_latency) else self.flush_latency
            if delay > 0:
                time.sleep(delay)
            with self._lock:
                if target > self.durable_lsn:
                    self.durable_lsn = target
                self.flushes += 1
                return self.durable_lsn

    def records(self) -> list[LogRecord]:
        with self._lock:
            return decode_records(bytes(self._buf))[0]

    def __iter__(self) -> Iterator[LogRecord]:
        return iter(self.records())

    def buffer(self) -> bytes:
        with self._lock:
            return bytes(self._buf)

    def durable_bytes(self) -> bytes:
        """The byte image that survives a crash right now."""
        with self._lock:
            return bytes(self._buf[: self._ends[self.durable_lsn - 1]])
