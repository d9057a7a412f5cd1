"""Brute-force reference for the snapshot registry.

A registry state is a multiset of entries ``(anchor key, peer value, kind)``
where kind is ``"b"`` for a begin mapping (a snapshot pair) and ``"c"`` for
a commit mapping.  Only states that real histories can produce are
enumerated: larger anchor keys never map to smaller peer values, a commit
mapping is strictly above everything keyed below it, and no two commits
share an anchor key.

The reference answers come straight from visibility: a snapshot pair
``(a, p)`` sees a commit ``(k, v)`` in the anchor iff ``k <= a`` and in the
peer iff ``v <= p``; consistency means the two agree.
"""

from __future__ import annotations

import math

from xengine.csr import CsrIndex

TS = range(1, 9)
LATEST = max(TS)  # the peer's newest snapshot is never behind any recorded value


def _compatible(e1, e2) -> bool:
    (k1, v1, t1), (k2, v2, t2) = sorted((e1, e2))
    if k1 < k2:
        return v1 < v2 if t2 == "c" else v1 <= v2
    if t1 == t2 == "c":
        return False
    if t1 != t2:
        # same key: the snapshot at an anchor commit's own timestamp sees that commit
        commit, begin = (e1, e2) if e1[2] == "c" else (e2, e1)
        return commit[1] <= begin[1]
    return True


def enumerate_states(max_entries: int = 4):
    """Every reachable state with at most ``max_entries`` entries over timestamps 1..8."""
    pool = [(k, v, t) for k in TS for v in TS for t in "bc"]
    out = []

    def rec(cur, start):
        out.append(tuple(cur))
        if len(cur) == max_entries:
            return
        for i in range(start, len(pool)):
            e = pool[i]
            if all(_compatible(x, e) for x in cur):
                cur.append(e)
                rec(cur, i)
                cur.pop()

    rec([], 0)
    return out


def select_valid(entries, a: int, p: int, latest: int = LATEST) -> bool:
    """Is ``(a, p)`` a snapshot pair that agrees with every recorded mapping?"""
    if p > latest:
        return False
    for k, v, kind in entries:
        if kind == "c":
            if (k <= a) != (v <= p):
                return False
        elif k < a and v > p or k > a and v < p:
            return False
    return True


def commit_valid(entries, key: int, c2: int, equal_key_sees: bool) -> bool:
    """May a commit at anchor ``key`` take peer point ``c2``?

    Snapshots keyed below the commit must not see it; those keyed above (or at
    it, when ``equal_key_sees``) must.  Earlier commits must stay earlier.
    """
    for k, v, _ in entries:
        sees_anchor = k > key or (k == key and equal_key_sees)
        if k < key and not v < c2:
            return False
        if sees_anchor and not c2 <= v:
            return False
    return True


def build_index(entries) -> CsrIndex:
    idx = CsrIndex(min(k for k, _, _ in entries) if entries else 0, capacity=1 << 30)
    for k, v, _ in entries:
        idx.insert(k, v)
    return idx


def equivalence(max_entries: int = 4) -> tuple[int, list]:
    """Compare the partition decision logic against the reference on every state.

    Returns (states checked, disagreements).
    """
    states = enumerate_states(max_entries)
    by_shape: dict[tuple, list] = {}
    for st in states:
        by_shape.setdefault(tuple((k, v) for k, v, _ in st), []).append(st)
    bad = []
    latest = lambda: LATEST  # noqa: E731
    for shape, variants in by_shape.items():
        idx = build_index(variants[0])
        for a in TS:
            p = idx.choose(a, latest)
            for st in variants:
                if not select_valid(st, a, p):
                    bad.append(("select", st, a, p))
        for key in TS:
            for eq in (False, True):
                low, high = idx.bounds(key, eq)
                for c2 in range(1, LATEST + 2):
                    impl = low < c2 <= high
                    if impl != commit_valid(variants[0], key, c2, eq):
                        bad.append(("commit", variants[0], key, c2, eq, impl))
    return len(states), bad


def order_consistent(pairs) -> bool:
    """No two mappings ordered one way by anchor key and the other way by peer value."""
    by_key: dict[int, list] = {}
    for k, v in pairs:
        by_key.setdefault(k, []).append(v)
    best = -math.inf
    for k in sorted(by_key):
        if min(by_key[k]) < best:
            return False
        best = max(best, max(by_key[k]))
    return True
