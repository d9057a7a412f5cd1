import struct

import pytest
from hypothesis import given, strategies as st

from xengine.wal import (
    CorruptLog, LogRecord, RecordKind, Wal, decode_commit_begin, decode_commit_end, decode_data,
    decode_records, encode_commit_begin, encode_commit_end, encode_data,
)


def test_frame_layout():
    raw = LogRecord(7, RecordKind.COMMIT_END, 42, b"ab").encode()
    length, kind, lsn, txn = struct.unpack_from("<IBQQ", raw)
    assert (length, kind, lsn, txn) == (1 + 8 + 8 + 2, 5, 7, 42)
    assert raw[-2:] == b"ab"


def test_payload_helpers_round_trip():
    assert decode_data(encode_data("t", b"k\x00", b"v")) == ("t", b"k\x00", b"v")
    assert decode_data(encode_data("t", b"k", None)) == ("t", b"k", b"")
    assert decode_commit_begin(encode_commit_begin(99, ("anchor", "peer"))) == (99, ("anchor", "peer"))
    assert decode_commit_end(encode_commit_end(12)) == 12
    assert decode_commit_end(b"") == 0


records = st.lists(
    st.tuples(st.sampled_from(list(RecordKind)), st.integers(0, 2**63), st.binary(max_size=40)),
    max_size=20,
)


@given(records)
def test_decode_inverts_encode(items):
    recs = [LogRecord(i + 1, k, t, p) for i, (k, t, p) in enumerate(items)]
    buf = b"".join(r.encode() for r in recs)
    assert decode_records(buf) == (recs, None)


@given(records, st.data())
def test_truncation_yields_valid_prefix(items, data):
    recs = [LogRecord(i + 1, k, t, p) for i, (k, t, p) in enumerate(items)]
    buf = b"".join(r.encode() for r in recs)
    cut = data.draw(st.integers(0, len(buf)))
    got, bad = decode_records(buf[:cut])
    assert got == recs[: len(got)]
    consumed = sum(len(r.encode()) for r in got)
    assert (bad is None) == (consumed == cut)
    if bad is not None:
        assert bad == consumed


def test_corrupt_record_reported_at_offset():
    good = LogRecord(1, RecordKind.INSERT, 1, b"x").encode()
    bad = LogRecord(2, RecordKind.INSERT, 1, b"y").encode()
    bad = bad[:4] + b"\x63" + bad[5:]  # unknown kind
    recs, off = decode_records(good + bad)
    assert len(recs) == 1 and off == len(good)
    with pytest.raises(CorruptLog) as e:
        decode_records(good + bad, strict=True)
    assert e.value.offset == len(good)


def test_non_increasing_lsn_is_corrupt():
    buf = LogRecord(2, RecordKind.ABORT, 1).encode() + LogRecord(2, RecordKind.ABORT, 1).encode()
    recs, off = decode_records(buf)
    assert len(recs) == 1 and off is not None


def test_durable_frontier_is_exclusive():
    w = Wal()
    assert w.durable_lsn == 1 and w.durable_bytes() == b""
    a = w.append(RecordKind.INSERT, 1, b"a")
    w.append(RecordKind.COMMIT_END, 1)
    assert a == 1
    assert w.advance_durable() == 3
    w.append(RecordKind.ABORT, 2)
    recs, off = decode_records(w.durable_bytes())
    assert [r.lsn for r in recs] == [1, 2] and off is None
    assert len(w.records()) == 3
    assert w.flushes == 1


def test_flush_latency_callable_is_used():
    calls = []
    w = Wal(lambda: calls.append(1) or 0.0)
    w.append(RecordKind.ABORT, 1)
    w.advance_durable()
    assert calls == [1]
