"""Cross-engine snapshot registry.

Maps anchor-engine timestamps to the set of peer-engine timestamps that
were used as (or committed against) them.  Values on both sides are
inclusive snapshot scalars: a commit stamped ``c`` is visible to every
snapshot ``>= c`` in its engine.

The registry is a list of capacity-bounded partitions ("indexes") ordered
by the smallest anchor key they cover.  Only the last partition accepts new
mappings; a query is confined to the partition that covers its key.
"""

from __future__ import annotations

import bisect
import threading
from collections import Counter as Tally
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional, Union

INACTIVE_INDEX = "inactive_index"
OUT_OF_BOUNDS = "out_of_bounds"

NEG_INF = float("-inf")
POS_INF = float("inf")


@dataclass(frozen=True)
class CsrDecision:
    value: Optional[int] = None
    reason: Optional[str] = None
    low: Union[int, float] = NEG_INF
    high: Union[int, float] = POS_INF

    @property
    def accepted(self) -> bool:
        return self.reason is None

    @classmethod
    def rejected(cls, reason: str, low=NEG_INF, high=POS_INF) -> "CsrDecision":
        return cls(None, reason, low, high)


class InactiveIndex(Exception):
    pass


class RWLock:
    """Writer-preferring reader/writer latch."""

    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    def acquire_read(self):
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if not self._readers:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()


class _Read:
    def __init__(self, lock: RWLock):
        self.lock = lock

    def __enter__(self):
        self.lock.acquire_read()

    def __exit__(self, *exc):
        self.lock.release_read()


class _Write(_Read):
    def __enter__(self):
        self.lock.acquire_write()

    def __exit__(self, *exc):
        self.lock.release_write()


@dataclass(eq=False)
class CsrIndex:
    min_anchor: int
    capacity: int
    open: bool = True
    # Largest peer value held by the partitions before this one; a lower bound for commit checks.
    floor: Union[int, float] = NEG_INF
    keys: list = field(default_factory=list)
    values: dict = field(default_factory=dict)  # anchor -> sorted list of peer values
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def max_anchor(self) -> int:
        return self.keys[-1] if self.keys else self.min_anchor

    @property
    def full(self) -> bool:
        return len(self.keys) >= self.capacity

    def max_value(self) -> Union[int, float]:
        return max((v[-1] for v in self.values.values()), default=self.floor)

    def entries(self) -> Iterator[tuple[int, list[int]]]:
        for k in self.keys:
            yield k, list(self.values[k])

    # The registry keeps peer values order-consistent with anchor keys, so the extreme value
    # over a key range sits at the range's boundary key.

    def max_at_or_below(self, key: int, inclusive: bool = True) -> Optional[int]:
        i = bisect.bisect_right(self.keys, key) if inclusive else bisect.bisect_left(self.keys, key)
        return self.values[self.keys[i - 1]][-1] if i else None

    def min_above(self, key: int, inclusive: bool = False) -> Optional[int]:
        i = bisect.bisect_left(self.keys, key) if inclusive else bisect.bisect_right(self.keys, key)
        return self.values[self.keys[i]][0] if i < len(self.keys) else None

    def choose(self, anchor_snap: int, latest: Callable[[], int]) -> int:
        """Peer snapshot for ``anchor_snap``: the newest one no later mapping contradicts."""
        below = self.max_at_or_below(anchor_snap)
        above = self.min_above(anchor_snap)
        if above is None:
            return latest()
        if below is not None:
            return below
        return above - 1

    def bounds(self, key: int, equal_key_sees: bool = False) -> tuple[Union[int, float], Union[int, float]]:
        """``(low, high)`` such that a commit mapping ``key -> v`` is consistent iff ``low < v <= high``."""
        below = self.max_at_or_below(key, inclusive=False)
        low = self.floor if below is None else max(below, self.floor)
        above = self.min_above(key, inclusive=equal_key_sees)
        return low, (POS_INF if above is None else above)

    def insert(self, key: int, value: int) -> None:
        vals = self.values.get(key)
        if vals is None:
            bisect.insort(self.keys, key)
            self.values[key] = [value]
        elif value not in vals:
            bisect.insort(vals, value)


class _NeedIndex(Exception):
    """Raised under a partition latch when the mapping needs a fresh partition."""


class CsrRegistry:
    def __init__(self, capacity_per_index: int = 1000, gc_access_threshold: int = 5000,
                 min_active_anchor: Optional[Callable[[], int]] = None):
        if capacity_per_index < 1:
            raise ValueError("index capacity must be positive")
        self.capacity_per_index = capacity_per_index
        self.gc_access_threshold = gc_access_threshold
        self.min_active_anchor = min_active_anchor
        self.indexes: list[CsrIndex] = []
        self._list_latch = RWLock()
        self._gc_lock = threading.Lock()
        self.access_counter = 0
        self.indexes_created = 0
        self.indexes_recycled = 0
        self.gc_runs = 0
        self.rejections: Tally = Tally()

    # lookup ----------------------------------------------------------

    def locate_index(self, anchor_ts: int) -> Optional[CsrIndex]:
        """Last partition whose ``min_anchor <= anchor_ts``; caller holds the list latch (shared)."""
        for idx in reversed(self.indexes):
            if idx.min_anchor <= anchor_ts:
                return idx
        return None

    def _route(self, key: int) -> CsrIndex:
        """Partition for ``key`` under the shared list latch; may raise :class:`_NeedIndex`."""
        idx = self.locate_index(key)
        if idx is not None:
            return idx
        if not self.indexes:
            raise _NeedIndex
        first = self.indexes[0]
        if len(self.indexes) == 1 and first.open:
            # Only partition and still open: widen it downwards instead of rejecting.
            with first.lock:
                if first.min_anchor > key:
                    first.min_anchor = key
            return first
        raise InactiveIndex

    def _put(self, idx: CsrIndex, key: int, value: int) -> None:
        """Insert under ``idx.lock``."""
        if not idx.open:
            raise InactiveIndex
        if key in idx.values:
            idx.insert(key, value)
            return
        if idx.full:
            if key > idx.max_anchor:
                raise _NeedIndex
            raise InactiveIndex
        idx.insert(key, value)

    def _new_index(self, key: int, value: int, expect_last: Optional[CsrIndex]) -> bool:
        """Append a partition holding ``key -> value``; False if the list changed meanwhile."""
        with _Write(self._list_latch):
            last = self.indexes[-1] if self.indexes else None
            if last is not expect_last:
                return False
            floor: Union[int, float] = NEG_INF
            if last is not None:
                with last.lock:
                    if not last.full or key <= last.max_anchor:
                        return False
                    last.open = False
                    floor = last.max_value()
            idx = CsrIndex(key, self.capacity_per_index, floor=floor)
            idx.insert(key, value)
            self.indexes.append(idx)
            self.indexes_created += 1
            return True

    def map(self, anchor_ts: int, peer_ts: int) -> None:
        """Record ``anchor_ts -> peer_ts``; raises :class:`InactiveIndex` when it cannot."""
        while True:
            with _Read(self._list_latch):
                try:
                    idx = self._route(anchor_ts)
                    with idx.lock:
                        self._put(idx, anchor_ts, peer_ts)
                    return
                except _NeedIndex:
                    last = self.indexes[-1] if self.indexes else None
            if self._new_index(anchor_ts, peer_ts, last):
                return

    # algorithms ------------------------------------------------------

    def select_snapshot(self, anchor_snap: int, peer_latest: Union[int, Callable[[], int]]) -> CsrDecision:
        """Pick the peer snapshot for a transaction whose anchor snapshot is ``anchor_snap``.

        ``peer_latest`` may be a callable; it is then read under the partition latch.
        """
        latest = peer_latest if callable(peer_latest) else (lambda: peer_latest)
        try:
            while True:
                with _Read(self._list_latch):
                    try:
                        idx = self._route(anchor_snap)
                    except _NeedIndex:
                        idx, last = None, None
                    if idx is not None:
                        with idx.lock:
                            value = idx.choose(anchor_snap, latest)
                            try:
                                self._put(idx, anchor_snap, value)
                                return CsrDecision(value)
                            except _NeedIndex:
                                last = idx
                    value = latest()
                if self._new_index(anchor_snap, value, last):
                    return CsrDecision(value)
        except InactiveIndex:
            self.rejections[INACTIVE_INDEX] += 1
            return CsrDecision.rejected(INACTIVE_INDEX)
        finally:
            self.maybe_gc()

    def commit_check(self, anchor_commit_ts: int, peer_commit_ts: int, *,
                     equal_key_sees: bool = False) -> CsrDecision:
        """Accept ``anchor_commit_ts -> peer_commit_ts`` iff it keeps the registry order-consistent.

        Entries keyed below the anchor commit must not see the peer commit, so their peer values
        must be strictly smaller.  Entries keyed above must see it (value >= peer commit).  With
        ``equal_key_sees`` an entry keyed exactly at the anchor commit counts as above; use it
        when the key is a real anchor commit timestamp, which inclusive snapshots at that key see.
        """
        key, v = anchor_commit_ts, peer_commit_ts
        try:
            while True:
                with _Read(self._list_latch):
                    try:
                        idx = self._route(key)
                    except _NeedIndex:
                        idx, last = None, None
                    if idx is not None:
                        with idx.lock:
                            low, high = idx.bounds(key, equal_key_sees)
                            if low >= v or high < v:
                                self.rejections[OUT_OF_BOUNDS] += 1
                                return CsrDecision.rejected(OUT_OF_BOUNDS, low, high)
                            try:
                                self._put(idx, key, v)
                                return CsrDecision(v, None, low, high)
                            except _NeedIndex:
                                last = idx
                if self._new_index(key, v, last):
                    return CsrDecision(v, None, NEG_INF if last is None else low, POS_INF)
        except InactiveIndex:
            self.rejections[INACTIVE_INDEX] += 1
            return CsrDecision.rejected(INACTIVE_INDEX)
        finally:
            self.maybe_gc()

    # maintenance -----------------------------------------------------

    def recycle(self, min_active_anchor_snap: int) -> int:
        """Drop sealed partitions whose whole key range lies below ``min_active_anchor_snap``."""
        with _Write(self._list_latch):
            keep: list[CsrIndex] = []
            removed = 0
            for i, idx in enumerate(self.indexes):
                nxt = self.indexes[i + 1] if i + 1 < len(self.indexes) else None
                if not idx.open and nxt is not None and nxt.min_anchor <= min_active_anchor_snap:
                    removed += 1
                else:
                    keep.append(idx)
            self.indexes = keep
            self.indexes_recycled += removed
            return removed

    def maybe_gc(self) -> None:
        with self._gc_lock:
            self.access_counter += 1
            if self.access_counter < self.gc_access_threshold:
                return
            self.access_counter = 0
        if self.min_active_anchor is None:
            return
        self.gc_runs += 1
        self.recycle(self.min_active_anchor())

    # inspection ------------------------------------------------------

    def entries(self) -> list[tuple[int, list[int]]]:
        with _Read(self._list_latch):
            out = []
            for idx in self.indexes:
                with idx.lock:
                    out.extend(idx.entries())
            return out

    def dump(self) -> str:
        lines = []
        with _Read(self._list_latch):
            for idx in self.indexes:
                with idx.lock:
                    state = "open" if idx.open else "sealed"
                    lines.append(f"index {idx.min_anchor}..{idx.max_anchor} {state}")
                    for k, vals in idx.entries():
                        lines.append(f"  {k} -> [{','.join(map(str, vals))}]")
        return "\n".join(lines) + ("\n" if lines else "")

    @staticmethod
    def parse_dump(text: str) -> list[tuple[int, int, bool, list[tuple[int, list[int]]]]]:
        """Inverse of :meth:`dump`: ``(min, max, open, entries)`` per partition."""
        out: list = []
        for line in text.splitlines():
            if line.startswith("index "):
                rng, state = line[6:].split()
                lo, hi = rng.split("..")
                out.append((int(lo), int(hi), state == "open", []))
            elif line.strip():
                k, vals = line.strip().split(" -> ")
                out[-1][3].append((int(k), [int(x) for x in vals.strip("[]").split(",") if x]))
        return out
