import threading
import time

import pytest

from xengine import engine as engine_mod
from xengine.engine import (
    Counter, Isolation, ReadView, SnapshotKind, State, ValidationFailed, WaitTimeout, WriteConflict,
    adjust_read_view, make_engine, visible_in_view,
)
from xengine.wal import RecordKind


def counter_engine(**kw):
    e = make_engine("anchor", SnapshotKind.COUNTER, **kw)
    e.install("t", b"x", b"0", 1)
    return e


def view_engine(**kw):
    e = make_engine("peer", SnapshotKind.READ_VIEW, **kw)
    e.install("t", b"x", b"0", 1)
    return e


def commit(e, sub):
    e.pre_commit(sub)
    return e.post_commit(sub)


def test_isolation_parse():
    assert Isolation.parse("si") is Isolation.SNAPSHOT
    assert Isolation.parse("Read-Committed") is Isolation.READ_COMMITTED
    assert Isolation.parse("serializable") is Isolation.SERIALIZABLE
    with pytest.raises(ValueError):
        Isolation.parse("chaos")


def test_read_view_visibility():
    v = ReadView(5, 9, frozenset({6, 8}))
    assert [t for t in range(3, 11) if visible_in_view(v, t)] == [3, 4, 5, 7]
    with pytest.raises(ValueError):
        ReadView(4, 3)


def test_adjust_read_view_lowers_high():
    v = ReadView(5, 9, frozenset({6, 8}))
    assert adjust_read_view(v, 7) == ReadView(5, 7, frozenset({6}))
    assert adjust_read_view(v, 9) is v
    assert adjust_read_view(v, 3) == ReadView(3, 3)
    with pytest.raises(ValueError):
        adjust_read_view(v, 10)


def test_counter_snapshot_is_inclusive():
    e = counter_engine()
    w = e.begin_sub(1)
    e.write(w, "t", b"x", b"1")
    ts = e.pre_commit(w)
    lsn = e.post_commit(w)
    assert ts == 2 and e.point(ts) == 2 and lsn == e.wal.next_lsn
    assert e.read(e.begin_sub(2, Counter(2)), "t", b"x") == b"1"
    assert e.read(e.begin_sub(3, Counter(1)), "t", b"x") == b"0"


def test_read_view_commit_point_is_one_past_stamp():
    e = view_engine()
    w = e.begin_sub(1)
    e.write(w, "t", b"x", b"1")
    ts = e.pre_commit(w)
    e.post_commit(w)
    assert e.commit_point(w) == ts + 1 == e.latest_value()
    assert e.read(e.begin_sub(2), "t", b"x") == b"1"
    assert e.read(e.begin_sub(3, ReadView(ts, ts)), "t", b"x") == b"0"


def test_snapshot_kind_is_enforced():
    with pytest.raises(TypeError):
        counter_engine().begin_sub(1, ReadView(1, 1))


def test_in_flight_commit_hidden_from_plain_read_view():
    e = view_engine()
    w = e.begin_sub(1)
    e.write(w, "t", b"x", b"1")
    e.pre_commit(w)
    r = e.begin_sub(2)
    assert w.commit_ts in r.snapshot.active
    assert e.read(r, "t", b"x") == b"0"


def test_resolving_reader_waits_for_in_flight_commit():
    e = view_engine()
    w = e.begin_sub(1)
    e.write(w, "t", b"x", b"1")
    e.pre_commit(w)
    r = e.begin_sub(2, resolve_in_flight=True)
    threading.Timer(0.05, e.post_commit, args=(w,)).start()
    t0 = time.perf_counter()
    assert e.read(r, "t", b"x") == b"1"
    assert time.perf_counter() - t0 >= 0.04


def test_wait_times_out(monkeypatch):
    monkeypatch.setattr(engine_mod, "WAIT_TIMEOUT", 0.05)
    e = counter_engine()
    w = e.begin_sub(1)
    e.write(w, "t", b"x", b"1")
    e.pre_commit(w)
    with pytest.raises(WaitTimeout):
        e.read(e.begin_sub(2, Counter(5)), "t", b"x")


def test_aborted_in_flight_commit_releases_reader():
    e = counter_engine()
    w = e.begin_sub(1)
    e.write(w, "t", b"x", b"1")
    e.pre_commit(w)
    threading.Timer(0.02, e.abort_sub, args=(w,)).start()
    assert e.read(e.begin_sub(2, Counter(5)), "t", b"x") == b"0"
    assert e.wal.records()[-1].kind is RecordKind.ABORT


def test_first_updater_wins():
    e = counter_engine()
    a, b = e.begin_sub(1), e.begin_sub(2)
    e.write(a, "t", b"x", b"a")
    with pytest.raises(WriteConflict):
        e.write(b, "t", b"x", b"b")
    commit(e, a)
    with pytest.raises(WriteConflict):
        e.write(b, "t", b"x", b"b")  # committed after b's snapshot


def test_own_writes_and_tombstones():
    e = counter_engine()
    s = e.begin_sub(1)
    e.write(s, "t", b"x", b"1")
    assert e.read(s, "t", b"x") == b"1"
    e.write(s, "t", b"x", None)
    assert e.read(s, "t", b"x") is None
    e.write(s, "t", b"new", b"n")
    commit(e, s)
    assert e.committed_value("t", b"x") is None
    assert ("t", b"x") not in e.committed_state()
    kinds = [r.kind for r in e.wal.records()]
    assert kinds == [RecordKind.COMMIT_BEGIN, RecordKind.DELETE, RecordKind.INSERT, RecordKind.COMMIT_END]


def test_validation_rejects_stale_read():
    e = counter_engine(serializable_validation=True)
    r = e.begin_sub(1)
    e.read(r, "t", b"x")
    w = e.begin_sub(2)
    e.write(w, "t", b"x", b"1")
    commit(e, w)
    e.write(r, "t", b"y", b"1")
    with pytest.raises(ValidationFailed):
        e.pre_commit(r)
    assert r.state is State.ABORTED
    assert e.committed_value("t", b"y") is None


def test_validation_sees_earlier_in_flight_overwriter():
    e = counter_engine(serializable_validation=True)
    r = e.begin_sub(1)
    e.read(r, "t", b"x")
    w = e.begin_sub(2)
    e.write(w, "t", b"x", b"1")
    e.pre_commit(w)
    with pytest.raises(ValidationFailed):
        e.pre_commit(r)


def test_validation_passes_when_read_is_current():
    e = counter_engine(serializable_validation=True)
    r = e.begin_sub(1)
    assert e.read(r, "t", b"x") == b"0"
    assert e.observed(r, "t", b"x") == 1
    e.write(r, "t", b"x", b"1")
    commit(e, r)
    assert e.committed_value("t", b"x") == b"1"


def test_install_advances_counters():
    a, p = counter_engine(), view_engine()
    a.install("t", b"k", b"v", 40)
    p.install("t", b"k", b"v", 40)
    assert a.latest_value() == 40 and p.latest_value() == 41
    with pytest.raises(ValueError):
        a.bump_counter(3)
