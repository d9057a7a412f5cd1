"""Post-hoc correctness checks over a recorded history.

Every check is a pure function of the event list.  The snapshot checks
compare per-engine scalars (see :mod:`xengine.history`), so a violation is
always a pair of transactions whose relative order differs between the two
engines.
"""

from __future__ import annotations

import bisect
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .history import HistoryEvent


@dataclass
class TxnView:
    txn: int
    isolation: Optional[str] = None
    snapshots: dict = field(default_factory=dict)  # engine -> first Begin ts
    commits: dict = field(default_factory=dict)  # engine -> PreCommit point
    post: dict = field(default_factory=dict)  # engine -> PostCommit lsn
    reads: list = field(default_factory=list)  # (engine, table, key, version)
    writes: set = field(default_factory=set)  # (engine, table, key)
    aborted: bool = False
    acked: bool = False

    @property
    def committed(self) -> bool:
        return bool(self.post) and not self.aborted and set(self.post) == set(self.commits)

    @property
    def snapshot_checked(self) -> bool:
        return self.isolation != "READ_COMMITTED"


def summarize(history: Iterable[HistoryEvent]) -> dict[int, TxnView]:
    txns: dict[int, TxnView] = {}
    for ev in history:
        if ev.kind in ("Durable", "Crash") or (ev.kind == "Recovered"):
            continue
        t = txns.get(ev.txn)
        if t is None:
            t = txns[ev.txn] = TxnView(ev.txn)
        k = ev.kind
        if k == "Start":
            t.isolation = ev.args[0]
        elif k == "Begin":
            t.snapshots.setdefault(ev.engine, ev.args[0])
        elif k == "Read":
            if ev.args[2] >= 0:
                t.reads.append((ev.engine, ev.args[0], ev.args[1], ev.args[2]))
        elif k == "Write":
            t.writes.add((ev.engine, ev.args[0], ev.args[1]))
        elif k == "PreCommit":
            t.commits[ev.engine] = ev.args[0]
        elif k == "PostCommit":
            t.post[ev.engine] = ev.args[0]
        elif k == "Abort":
            t.aborted = True
        elif k == "Ack":
            t.acked = True
    return txns


def _engines(txns: dict[int, TxnView]) -> tuple[str, str] | None:
    names = set()
    for t in txns.values():
        names.update(t.snapshots)
        names.update(t.commits)
    if len(names) < 2:
        return None
    if len(names) > 2:
        raise ValueError(f"expected two engines, saw {sorted(names)}")
    return tuple(sorted(names))  # type: ignore[return-value]


def _crossings(items: list[tuple[int, int, int]]) -> list[tuple[int, int]]:
    """Pairs (x, y) with x1 < y1 and y2 < x2 over items (v1, v2, id)."""
    items = sorted(items)
    out = []
    prefix_max = float("-inf")
    i = 0
    n = len(items)
    while i < n:
        j = i
        while j < n and items[j][0] == items[i][0]:
            j += 1
        for y in items[i:j]:
            if prefix_max > y[1]:
                out.extend((x[2], y[2]) for x in items[:i] if x[1] > y[1])
        for y in items[i:j]:
            prefix_max = max(prefix_max, y[1])
        i = j
    return out


def check_snapshot_skew(history: Iterable[HistoryEvent]) -> list[tuple[int, int]]:
    """Pairs whose snapshots are ordered one way in the first engine and the other way in the second."""
    txns = summarize(history)
    eng = _engines(txns)
    if eng is None:
        return []
    a, b = eng
    items = [(t.snapshots[a], t.snapshots[b], t.txn) for t in txns.values()
             if a in t.snapshots and b in t.snapshots and t.snapshot_checked]
    return _crossings(items)


def _visibility_disagreements(commits, readers) -> list[tuple[int, int]]:
    """(C, R) pairs where C is visible to R in exactly one engine.

    ``commits``: (c1, c2, id); ``readers``: (r1, r2, id).  Visible means c <= r.
    """
    readers = sorted(readers)
    r1s = [r[0] for r in readers]
    n = len(readers)
    prefix_max = [float("-inf")] * (n + 1)
    for i, r in enumerate(readers):
        prefix_max[i + 1] = max(prefix_max[i], r[1])
    suffix_min = [float("inf")] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix_min[i] = min(suffix_min[i + 1], readers[i][1])
    out = []
    for c1, c2, cid in commits:
        split = bisect.bisect_left(r1s, c1)  # readers[:split] have r1 < c1 (do not see C in engine 1)
        if prefix_max[split] >= c2:
            out.extend((cid, r[2]) for r in readers[:split] if r[1] >= c2 and r[2] != cid)
        if suffix_min[split] < c2:
            out.extend((cid, r[2]) for r in readers[split:] if r[1] < c2 and r[2] != cid)
    return out


def check_serial_concurrent(history: Iterable[HistoryEvent]) -> list[tuple[int, int]]:
    """(C, R): R sees committed cross-engine C in one engine but not the other."""
    txns = summarize(history)
    eng = _engines(txns)
    if eng is None:
        return []
    a, b = eng
    commits = [(t.commits[a], t.commits[b], t.txn) for t in txns.values()
               if t.committed and a in t.commits and b in t.commits]
    readers = [(t.snapshots[a], t.snapshots[b], t.txn) for t in txns.values()
               if a in t.snapshots and b in t.snapshots and t.snapshot_checked]
    return _visibility_disagreements(commits, readers)


@dataclass(frozen=True)
class RuleViolation:
    rules: str
    x: int
    y: int
    detail: str


def check_dsi_rules(history: Iterable[HistoryEvent]) -> list[RuleViolation]:
    """Pairwise agreement of begin/commit orders of cross-engine transactions across both engines.

    Begins at equal scalars are unordered and never conflict.
    """
    txns = summarize(history)
    eng = _engines(txns)
    if eng is None:
        return []
    a, b = eng
    cross = [t for t in txns.values() if a in t.snapshots and b in t.snapshots and t.snapshot_checked]
    committed = [t for t in txns.values() if t.committed and a in t.commits and b in t.commits]
    out = []
    for x, y in _crossings([(t.snapshots[a], t.snapshots[b], t.txn) for t in cross]):
        out.append(RuleViolation("4/8", x, y, f"begins ordered {x}<{y} in {a} but {y}<{x} in {b}"))
    for x, y in _crossings([(t.commits[a], t.commits[b], t.txn) for t in committed]):
        out.append(RuleViolation("1/5", x, y, f"commits ordered {x}<{y} in {a} but {y}<{x} in {b}"))
    begins = [(t.snapshots[a], t.snapshots[b], t.txn) for t in cross]
    commits = [(t.commits[a], t.commits[b], t.txn) for t in committed]
    for c, r in _visibility_disagreements(commits, begins):
        out.append(RuleViolation("2/3", r, c, f"begin of {r} and commit of {c} ordered differently across engines"))
    return out


# serializability ---------------------------------------------------------

def dependency_graph(history: Iterable[HistoryEvent]) -> dict[int, dict[int, set]]:
    """Edges ``graph[u][v] = {kinds}`` over committed transactions."""
    txns = summarize(history)
    committed = {tid: t for tid, t in txns.items() if t.committed}
    writers: dict[tuple, list[tuple[int, int]]] = defaultdict(list)
    for tid, t in committed.items():
        for (engine, table, key) in t.writes:
            writers[(engine, table, key)].append((t.commits[engine], tid))
    for lst in writers.values():
        lst.sort()
    graph: dict[int, dict[int, set]] = {tid: {} for tid in committed}

    def edge(u, v, kind):
        if u != v:
            graph[u].setdefault(v, set()).add(kind)

    for lst in writers.values():
        for (_, u), (_, v) in zip(lst, lst[1:]):
            edge(u, v, "ww")
    for tid, t in committed.items():
        for (engine, table, key, version) in t.reads:
            lst = writers.get((engine, table, key), [])
            points = [p for p, _ in lst]
            i = bisect.bisect_left(points, version)
            if i < len(lst) and points[i] == version:
                edge(lst[i][1], tid, "wr")
                i += 1
            if i < len(lst):
                edge(tid, lst[i][1], "rw")
    return graph


def find_cycle(graph: dict[int, dict[int, set]]) -> Optional[list[int]]:
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(graph, WHITE)
    for root in graph:
        if color[root] != WHITE:
            continue
        stack = [(root, iter(graph[root]))]
        path = [root]
        color[root] = GREY
        while stack:
            node, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[node] = BLACK
                stack.pop()
                path.pop()
                continue
            c = color.get(nxt, BLACK)
            if c == GREY:
                return path[path.index(nxt):] + [nxt]
            if c == WHITE:
                color[nxt] = GREY
                stack.append((nxt, iter(graph[nxt])))
                path.append(nxt)
    return None


def check_serializable(history: Iterable[HistoryEvent]) -> Optional[list[int]]:
    """A dependency cycle among committed transactions (closed path), or None."""
    return find_cycle(dependency_graph(history))


# atomicity / durability --------------------------------------------------

@dataclass(frozen=True)
class AtomicityViolation:
    kind: str  # early_ack | partial_survival | lost_ack
    txn: int
    detail: str


def check_atomicity_durability(history: Iterable[HistoryEvent]) -> list[AtomicityViolation]:
    events = list(history)
    out: list[AtomicityViolation] = []
    durable: dict[str, int] = defaultdict(int)
    post: dict[int, dict[str, int]] = defaultdict(dict)
    pre: dict[int, set] = defaultdict(set)
    acked: set[int] = set()
    crashed = False
    recovered: dict[int, set] = defaultdict(set)
    for ev in events:
        k = ev.kind
        if k == "Durable":
            durable[ev.engine] = max(durable[ev.engine], ev.args[0])
        elif k == "PreCommit":
            pre[ev.txn].add(ev.engine)
        elif k == "PostCommit":
            post[ev.txn][ev.engine] = ev.args[0]
        elif k == "Ack":
            missing = pre[ev.txn] - set(post[ev.txn])
            if missing:
                out.append(AtomicityViolation("early_ack", ev.txn, f"acked before post-commit in {sorted(missing)}"))
            for engine, lsn in post[ev.txn].items():
                if durable[engine] < lsn:
                    out.append(AtomicityViolation(
                        "early_ack", ev.txn, f"acked with {engine} durable {durable[engine]} < required {lsn}"))
            acked.add(ev.txn)
        elif k == "Crash":
            crashed = True
        elif k == "Recovered" and crashed:
            recovered[ev.txn].add(ev.engine)
    if crashed:
        for txn, engines in pre.items():
            got = recovered.get(txn, set())
            if len(engines) > 1 and got and got != engines:
                out.append(AtomicityViolation(
                    "partial_survival", txn, f"survived in {sorted(got)} of {sorted(engines)}"))
        for txn in acked:
            if recovered.get(txn, set()) != pre[txn]:
                out.append(AtomicityViolation("lost_ack", txn, "acknowledged but not fully recovered"))
    return out


def check_all(history: Iterable[HistoryEvent], serializable: bool = True) -> dict[str, list]:
    events = list(history)
    report = {
        "snapshot_skew": check_snapshot_skew(events),
        "serial_concurrent": check_serial_concurrent(events),
        "dsi_rules": check_dsi_rules(events),
        "atomicity_durability": check_atomicity_durability(events),
    }
    if serializable:
        cyc = check_serializable(events)
        report["serializable"] = [cyc] if cyc else []
    return report
