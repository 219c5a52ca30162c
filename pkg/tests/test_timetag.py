import io
import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from superrad.errors import (
    BadMagicError,
    InvalidChannelError,
    TimeTagFormatError,
    TruncatedStreamError,
    UnsortedStreamError,
    UnsupportedTimeUnitError,
    UnsupportedVersionError,
    ValidationError,
)
from superrad.timetag import (
    TimeTagStream,
    merge_streams,
    parse_stream,
    read_stream,
    sorted_stream,
    write_stream,
)


def encode(records, version=1, unit=1000, magic=b"TTG1", reserved=0, count=None):
    """Reference encoder built straight from the layout description."""
    count = len(records) if count is None else count
    out = magic + struct.pack("<HHQQ", version, reserved, unit, count)
    for ch, ts in records:
        out += struct.pack("<Bq", ch, ts)
    return out


records_strategy = st.lists(
    st.tuples(st.integers(0, 2), st.integers(-(2**62), 2**62)), max_size=60
).map(lambda r: sorted(r, key=lambda x: (x[1], x[0])))


def stream_of(records):
    if not records:
        return TimeTagStream.empty()
    ch, ts = zip(*records)
    return TimeTagStream(np.array(ch), np.array(ts))


@given(records_strategy)
def test_bytes_match_reference_encoder(records):
    assert stream_of(records).to_bytes() == encode(records)


@given(records_strategy)
def test_round_trip(records):
    s = stream_of(records)
    back = parse_stream(s.to_bytes())
    assert back == s
    assert list(back) == records


def test_round_trip_via_file(tmp_path):
    s = sorted_stream([0, 1, 2, 1], [10, 5, 5, 100])
    path = tmp_path / "s.ttg"
    n = write_stream(s, path)
    assert n == 24 + 9 * 4 == path.stat().st_size
    assert read_stream(path) == s
    buf = io.BytesIO()
    write_stream(s, buf)
    assert read_stream(io.BytesIO(buf.getvalue())) == s
    assert read_stream(buf.getvalue()) == s


def test_empty_stream():
    data = TimeTagStream.empty().to_bytes()
    assert len(data) == 24
    assert len(parse_stream(data)) == 0


GOOD = [(0, 0), (1, 5), (2, 5), (1, 9)]


@pytest.mark.parametrize(
    "data, cls, offset",
    [
        (b"TTG", TruncatedStreamError, 3),
        (encode(GOOD, magic=b"TTG2"), BadMagicError, 0),
        (encode(GOOD, version=2), UnsupportedVersionError, 4),
        (encode(GOOD, reserved=1), TimeTagFormatError, 6),
        (encode(GOOD, unit=1), UnsupportedTimeUnitError, 8),
        (encode(GOOD)[:-4], TruncatedStreamError, 24 + 3 * 9),
        (encode(GOOD, count=5), TruncatedStreamError, 24 + 4 * 9),
        (encode(GOOD) + b"\x00", TimeTagFormatError, 24 + 4 * 9),
        (encode([(0, 0), (3, 1)]), InvalidChannelError, 24 + 9),
        (encode([(0, 5), (1, 4)]), UnsortedStreamError, 24 + 9),
        (encode([(2, 5), (1, 5)]), UnsortedStreamError, 24 + 9),
    ],
)
def test_corruption_rejected_with_offset(data, cls, offset):
    with pytest.raises(cls) as info:
        parse_stream(data)
    assert type(info.value) is cls
    assert info.value.offset == offset
    assert f"offset {offset}" in str(info.value)


def test_truncation_reports_counts():
    with pytest.raises(TruncatedStreamError) as info:
        parse_stream(encode(GOOD, count=7))
    assert (info.value.expected, info.value.found) == (7, 4)


def test_unsorted_stream_cannot_be_written():
    s = TimeTagStream(np.array([1, 1], np.uint8), np.array([5, 3]))
    with pytest.raises(ValidationError):
        s.to_bytes()
    with pytest.raises(ValidationError):
        TimeTagStream(np.array([3], np.uint8), np.array([0])).validate()


def test_stream_is_immutable():
    s = sorted_stream([1, 2], [1, 2])
    with pytest.raises(ValueError):
        s.timestamp[0] = 9


def test_accessors():
    s = sorted_stream([0, 1, 2, 1, 0], [0, 3, 3, 7, 25])
    assert s.counts_per_channel() == {0: 2, 1: 2, 2: 1}
    assert s.times(1).tolist() == [3, 7]
    assert list(s.window(3, 25)) == [(1, 3), (2, 3), (1, 7)]
    assert s.header["record_count"] == 5


@given(records_strategy, records_strategy)
def test_merge_is_commutative_and_sorted(ra, rb):
    a, b = stream_of(ra), stream_of(rb)
    ab = merge_streams(a, b)
    assert ab == merge_streams(b, a)
    assert list(ab) == sorted(ra + rb, key=lambda x: (x[1], x[0]))
    ab.validate()


@given(records_strategy, records_strategy, records_strategy)
def test_merge_is_associative(ra, rb, rc):
    a, b, c = stream_of(ra), stream_of(rb), stream_of(rc)
    assert merge_streams(merge_streams(a, b), c) == merge_streams(a, merge_streams(b, c))


def test_merge_handles_extreme_timestamps():
    big = 2**62
    a = sorted_stream([1, 0], [-big, big])
    b = sorted_stream([2], [0])
    assert list(merge_streams(a, b)) == [(1, -big), (2, 0), (0, big)]
