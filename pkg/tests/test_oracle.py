from hypothesis import given, strategies as st

from xengine import oracle
from xengine.history import History, HistoryEvent


def hist(*rows):
    """rows: (txn, engine, kind, *args)"""
    h = History()
    for txn, engine, kind, *args in rows:
        h.record(txn, engine, kind, *args)
    return h.events


def cross_txn(txn, a_snap, p_snap, a_commit=None, p_commit=None):
    rows = [(txn, None, "Start", "SNAPSHOT"), (txn, "anchor", "Begin", a_snap), (txn, "peer", "Begin", p_snap)]
    if a_commit is not None:
        rows += [(txn, "anchor", "Write", "t", b"x"), (txn, "peer", "Write", "t", b"y"),
                 (txn, "anchor", "PreCommit", a_commit), (txn, "peer", "PreCommit", p_commit),
                 (txn, "anchor", "PostCommit", 10 + txn), (txn, "peer", "PostCommit", 10 + txn)]
    return rows


def test_crossed_snapshots_are_skew():
    ev = hist(*cross_txn(1, 1000, 200), *cross_txn(2, 3000, 100))
    assert oracle.check_snapshot_skew(ev) == [(1, 2)]
    assert [v.rules for v in oracle.check_dsi_rules(ev)] == ["4/8"]


def test_ordered_snapshots_are_clean():
    ev = hist(*cross_txn(1, 1000, 100), *cross_txn(2, 1000, 100), *cross_txn(3, 3000, 200))
    assert oracle.check_snapshot_skew(ev) == []


def test_half_visible_commit_is_serial_concurrent():
    # 5 commits at (4000, 251); 6 reads with anchor 4000 (sees it) but peer 250 (does not)
    ev = hist(*cross_txn(5, 3999, 250, 4000, 251), *cross_txn(6, 4000, 250))
    assert oracle.check_serial_concurrent(ev) == [(5, 6)]
    assert {v.rules for v in oracle.check_dsi_rules(ev)} == {"2/3"}


def test_read_committed_is_not_snapshot_checked():
    rows = cross_txn(1, 1000, 200) + cross_txn(2, 3000, 100)
    rows[3] = (2, None, "Start", "READ_COMMITTED")
    assert oracle.check_snapshot_skew(hist(*rows)) == []


def test_commit_order_disagreement():
    ev = hist(*cross_txn(1, 1, 1, 5, 9), *cross_txn(2, 1, 1, 6, 8))
    assert [(v.rules, v.x, v.y) for v in oracle.check_dsi_rules(ev)] == [("1/5", 1, 2)]


def test_write_skew_cycle():
    ev = hist(
        (1, "anchor", "Read", "t", b"x", 1), (1, "peer", "Read", "t", b"y", 1),
        (2, "anchor", "Read", "t", b"x", 1), (2, "peer", "Read", "t", b"y", 1),
        (1, "anchor", "Write", "t", b"x"), (2, "peer", "Write", "t", b"y"),
        (1, "anchor", "PreCommit", 2), (1, "anchor", "PostCommit", 3),
        (2, "peer", "PreCommit", 2), (2, "peer", "PostCommit", 3),
    )
    graph = oracle.dependency_graph(ev)
    assert graph == {1: {2: {"rw"}}, 2: {1: {"rw"}}}
    assert oracle.check_serializable(ev) in ([1, 2, 1], [2, 1, 2])


def test_dependency_edges():
    ev = hist(
        (1, "anchor", "Write", "t", b"x"), (1, "anchor", "PreCommit", 2), (1, "anchor", "PostCommit", 3),
        (2, "anchor", "Read", "t", b"x", 2), (2, "anchor", "Write", "t", b"x"),
        (2, "anchor", "PreCommit", 3), (2, "anchor", "PostCommit", 5),
        (3, "anchor", "Read", "t", b"x", 2), (3, "anchor", "PreCommit", 4), (3, "anchor", "PostCommit", 6),
    )
    graph = oracle.dependency_graph(ev)
    assert graph[1] == {2: {"ww", "wr"}, 3: {"wr"}}
    assert graph[3] == {2: {"rw"}}
    assert oracle.find_cycle(graph) is None


def test_aborted_transactions_leave_no_edges():
    ev = hist((1, "anchor", "Write", "t", b"x"), (1, "anchor", "PreCommit", 2), (1, None, "Abort", "x"))
    assert oracle.dependency_graph(ev) == {}


def test_early_ack_detected():
    ev = hist(
        (1, "anchor", "PreCommit", 2), (1, "anchor", "PostCommit", 4),
        (0, "anchor", "Durable", 3), (1, None, "Ack"),
    )
    [v] = oracle.check_atomicity_durability(ev)
    assert v.kind == "early_ack"
    ok = hist(
        (1, "anchor", "PreCommit", 2), (1, "anchor", "PostCommit", 4),
        (0, "anchor", "Durable", 4), (1, None, "Ack"),
    )
    assert oracle.check_atomicity_durability(ok) == []


def test_ack_before_every_post_commit_detected():
    ev = hist((1, "anchor", "PreCommit", 2), (1, "peer", "PreCommit", 2), (1, "anchor", "PostCommit", 4),
              (0, "anchor", "Durable", 9), (1, None, "Ack"))
    assert [v.kind for v in oracle.check_atomicity_durability(ev)] == ["early_ack"]


def test_partial_survival_and_lost_ack():
    ev = hist(
        (1, "anchor", "PreCommit", 2), (1, "peer", "PreCommit", 2),
        (1, "anchor", "PostCommit", 4), (1, "peer", "PostCommit", 4),
        (0, "anchor", "Durable", 4), (0, "peer", "Durable", 4), (1, None, "Ack"),
        (0, None, "Crash"), (1, "anchor", "Recovered"),
    )
    kinds = sorted(v.kind for v in oracle.check_atomicity_durability(ev))
    assert kinds == ["lost_ack", "partial_survival"]


def test_trace_round_trip(tmp_path):
    ev = hist(*cross_txn(1, 10, 20, 11, 21), (1, None, "CsrCommitCheck", 11, 21, True), (1, None, "Ack"))
    h = History.from_events(ev)
    h.save(tmp_path / "t.trace")
    back = History.load(tmp_path / "t.trace")
    assert back.events == ev
    assert HistoryEvent.from_line(ev[0].to_line()) == ev[0]


pairs = st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), max_size=12)


@given(pairs)
def test_crossing_sweep_matches_pairwise(items):
    tagged = [(a, b, i) for i, (a, b) in enumerate(items)]
    brute = {(x[2], y[2]) for x in tagged for y in tagged if x[0] < y[0] and y[1] < x[1]}
    assert set(oracle._crossings(tagged)) == brute


@given(pairs, pairs)
def test_visibility_sweep_matches_pairwise(cs, rs):
    commits = [(a, b, i) for i, (a, b) in enumerate(cs)]
    readers = [(a, b, 100 + i) for i, (a, b) in enumerate(rs)]
    brute = {(c[2], r[2]) for c in commits for r in readers if (c[0] <= r[0]) != (c[1] <= r[1])}
    assert set(oracle._visibility_disagreements(commits, readers)) == brute


@given(st.dictionaries(st.integers(0, 7), st.sets(st.integers(0, 7), max_size=3), max_size=8))
def test_find_cycle_agrees_with_reachability(adj):
    graph = {u: {v: {"ww"} for v in vs} for u, vs in adj.items()}
    for vs in adj.values():
        for v in vs:
            graph.setdefault(v, {})
    reach = {u: set(graph[u]) for u in graph}
    changed = True
    while changed:
        changed = False
        for u in graph:
            new = set().union(*(reach[v] for v in reach[u])) - reach[u] if reach[u] else set()
            if new:
                reach[u] |= new
                changed = True
    has_cycle = any(u in reach[u] for u in graph)
    cyc = oracle.find_cycle(graph)
    assert (cyc is not None) == has_cycle
    if cyc:
        assert cyc[0] == cyc[-1]
        assert all(b in graph[a] for a, b in zip(cyc, cyc[1:]))


def _random_history(data, n_txns, n_keys):
    """Single-engine multiversion history with distinct begin/commit points per transaction."""
    points = data.draw(st.permutations(list(range(1, 2 * n_txns + 1))))
    txns = []
    for i in range(n_txns):
        b, c = sorted(points[2 * i: 2 * i + 2])
        reads = data.draw(st.sets(st.integers(0, n_keys - 1), max_size=n_keys))
        writes = data.draw(st.sets(st.integers(0, n_keys - 1), max_size=n_keys))
        txns.append((i + 1, b, c, sorted(reads), sorted(writes)))
    rows = []
    for tid, b, c, reads, writes in txns:
        for k in reads:
            seen = max((oc for ot, _, oc, _, ow in txns if k in ow and oc <= b), default=0)
            rows.append((tid, "e", "Read", "t", bytes([k]), seen))
        rows += [(tid, "e", "Write", "t", bytes([k])) for k in writes]
        rows += [(tid, "e", "PreCommit", c), (tid, "e", "PostCommit", c)]
    return txns, rows


def _serial_order_exists(txns):
    """Is there a serial order matching every key's version order and every read's source?"""
    import itertools
    by_commit = {c: tid for tid, _, c, _, _ in txns}
    for order in itertools.permutations([t[0] for t in txns]):
        pos = {tid: i for i, tid in enumerate(order)}
        ok = True
        for tid, b, c, reads, writes in txns:
            for k in reads:
                src = max((oc for _, _, oc, _, ow in txns if k in ow and oc <= b), default=0)
                src_pos = pos[by_commit[src]] if src else -1
                if src and src_pos >= pos[tid]:
                    ok = False
                # no other writer of k may sit between the source and the reader
                for ot, _, oc, _, ow in txns:
                    if ot != tid and k in ow and oc != src and src_pos < pos[ot] < pos[tid]:
                        ok = False
            for ot, _, oc, _, ow in txns:
                if ot != tid and set(writes) & set(ow) and (oc < c) != (pos[ot] < pos[tid]):
                    ok = False
        if ok:
            return True
    return False


@given(st.integers(1, 5), st.integers(1, 3), st.data())
def test_cycle_check_matches_permutation_search(n_txns, n_keys, data):
    txns, rows = _random_history(data, n_txns, n_keys)
    ev = hist(*rows)
    assert (oracle.check_serializable(ev) is None) == _serial_order_exists(txns)


@given(st.integers(1, 4), st.data())
def test_independent_transaction_keeps_clean_history_clean(n_txns, data):
    txns, rows = _random_history(data, n_txns, 2)
    ev = hist(*rows)
    if oracle.check_serializable(ev) is not None:
        return
    extra = rows + [(99, "e", "Read", "u", b"z", 0), (99, "e", "Write", "u", b"z"),
                    (99, "e", "PreCommit", 100), (99, "e", "PostCommit", 100)]
    assert oracle.check_serializable(hist(*extra)) is None
