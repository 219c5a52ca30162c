"""Binary time-tag streams.

Layout, all little-endian, no padding::

    header  magic b"TTG1" | version u16 = 1 | reserved u16 = 0
            | time unit in fs u64 = 1000 | record count u64        (24 bytes)
    record  channel u8 | timestamp i64                             (9 bytes)

Channel 0 carries the laser sync, channels 1 and 2 the two detectors.
Records are ordered by timestamp, ties broken by ascending channel.
"""
from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadMagicError,
    InvalidChannelError,
    TimeTagFormatError,
    TruncatedStreamError,
    UnsortedStreamError,
    UnsupportedTimeUnitError,
    UnsupportedVersionError,
    ValidationError,
)

MAGIC = b"TTG1"
VERSION = 1
TIME_UNIT_FS = 1000
MAX_CHANNEL = 2
SYNC = 0

HEADER = struct.Struct("<4sHHQQ")
HEADER_SIZE = HEADER.size
RECORD_DTYPE = np.dtype([("channel", "<u1"), ("timestamp", "<i8")])
RECORD_SIZE = RECORD_DTYPE.itemsize

assert HEADER_SIZE == 24 and RECORD_SIZE == 9


def _first_unsorted(channel, timestamp):
    """Index of the first record out of (timestamp, channel) order, or -1."""
    if len(timestamp) < 2:
        return -1
    dt = np.diff(timestamp)
    bad = (dt < 0) | ((dt == 0) & (np.diff(channel.astype(np.int16)) < 0))
    idx = np.flatnonzero(bad)
    return int(idx[0]) + 1 if idx.size else -1


@dataclass(frozen=True, eq=False)
class TimeTagStream:
    """Immutable, ordered (channel, timestamp_ps) records."""

    channel: np.ndarray
    timestamp: np.ndarray

    def __post_init__(self):
        ch = np.ascontiguousarray(self.channel, dtype=np.uint8)
        ts = np.ascontiguousarray(self.timestamp, dtype=np.int64)
        if ch.shape != ts.shape or ch.ndim != 1:
            raise ValidationError("channel and timestamp arrays must be 1-D and equal length")
        ch.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "channel", ch)
        object.__setattr__(self, "timestamp", ts)

    @classmethod
    def empty(cls):
        return cls(np.empty(0, np.uint8), np.empty(0, np.int64))

    @classmethod
    def from_records(cls, records):
        """Build from ``(channel, timestamp)`` pairs, sorting them."""
        arr = np.array(list(records), dtype=np.int64).reshape(-1, 2)
        order = np.lexsort((arr[:, 0], arr[:, 1]))
        return cls(arr[order, 0], arr[order, 1])

    def __len__(self):
        return len(self.timestamp)

    def __eq__(self, other):
        if not isinstance(other, TimeTagStream):
            return NotImplemented
        return np.array_equal(self.channel, other.channel) and np.array_equal(
            self.timestamp, other.timestamp
        )

    def __iter__(self):
        return zip(self.channel.tolist(), self.timestamp.tolist())

    @property
    def header(self):
        return {
            "magic": MAGIC,
            "version": VERSION,
            "time_unit_fs": TIME_UNIT_FS,
            "channel_count": MAX_CHANNEL + 1,
            "record_count": len(self),
        }

    def times(self, channel):
        return self.timestamp[self.channel == channel]

    def counts_per_channel(self):
        return {int(c): int(n) for c, n in zip(*np.unique(self.channel, return_counts=True))}

    def validate(self):
        """Raise ValidationError if channels or ordering break the stream invariants."""
        if len(self) and int(self.channel.max()) > MAX_CHANNEL:
            raise ValidationError(f"channel {int(self.channel.max())} exceeds {MAX_CHANNEL}")
        i = _first_unsorted(self.channel, self.timestamp)
        if i >= 0:
            raise ValidationError(f"stream is not sorted at record {i}")

    def window(self, start_ps, stop_ps):
        """Records with ``start_ps <= timestamp < stop_ps``."""
        lo, hi = np.searchsorted(self.timestamp, [start_ps, stop_ps], side="left")
        return TimeTagStream(self.channel[lo:hi], self.timestamp[lo:hi])

    def to_bytes(self) -> bytes:
        self.validate()
        rec = np.empty(len(self), dtype=RECORD_DTYPE)
        rec["channel"] = self.channel
        rec["timestamp"] = self.timestamp
        head = HEADER.pack(MAGIC, VERSION, 0, TIME_UNIT_FS, len(self))
        return head + rec.tobytes()


def write_stream(stream: TimeTagStream, destination) -> int:
    """Write ``stream`` to a path or binary file object; returns bytes written."""
    data = stream.to_bytes()
    if isinstance(destination, (str, os.PathLike)):
        with open(destination, "wb") as fh:
            fh.write(data)
    else:
        destination.write(data)
    return len(data)


def parse_stream(data: bytes) -> TimeTagStream:
    """Decode and validate a complete byte string."""
    data = memoryview(data).cast("B")
    if len(data) < HEADER_SIZE:
        raise TruncatedStreamError(
            f"header needs {HEADER_SIZE} bytes, got {len(data)}", len(data)
        )
    magic, version, reserved, unit, count = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {bytes(magic)!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if reserved != 0:
        raise TimeTagFormatError(f"reserved field is {reserved}, expected 0", 6)
    if unit != TIME_UNIT_FS:
        raise UnsupportedTimeUnitError(f"time unit {unit} fs, expected {TIME_UNIT_FS}", 8)

    body = len(data) - HEADER_SIZE
    found = body // RECORD_SIZE
    if found < count:
        raise TruncatedStreamError(
            f"header declares {count} records but {found} are present",
            HEADER_SIZE + found * RECORD_SIZE,
            expected=count,
            found=found,
        )
    if body > count * RECORD_SIZE:
        raise TimeTagFormatError(
            f"{body - count * RECORD_SIZE} trailing bytes after {count} records",
            HEADER_SIZE + count * RECORD_SIZE,
        )

    rec = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER_SIZE)
    channel = rec["channel"].copy()
    timestamp = rec["timestamp"].copy()
    bad = np.flatnonzero(channel > MAX_CHANNEL)
    if bad.size:
        i = int(bad[0])
        raise InvalidChannelError(
            f"record {i} has channel {int(channel[i])}", HEADER_SIZE + i * RECORD_SIZE
        )
    i = _first_unsorted(channel, timestamp)
    if i >= 0:
        raise UnsortedStreamError(
            f"record {i} breaks (timestamp, channel) ordering", HEADER_SIZE + i * RECORD_SIZE
        )
    return TimeTagStream(channel, timestamp)


def read_stream(source) -> TimeTagStream:
    """Read a stream from a path, bytes, or binary file object."""
    if isinstance(source, (bytes, bytearray, memoryview)):
        return parse_stream(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return parse_stream(fh.read())
    if isinstance(source, io.IOBase) or hasattr(source, "read"):
        return parse_stream(source.read())
    raise TypeError(f"cannot read a stream from {type(source).__name__}")


def _sort_key(stream):
    """int64 key ordering records by (timestamp, channel), or None if it would overflow."""
    ts = stream.timestamp
    if len(ts) and (ts.min() < -(2**60) or ts.max() >= 2**60):
        return None
    return ts * 4 + stream.channel


def merge_streams(a: TimeTagStream, b: TimeTagStream) -> TimeTagStream:
    """Merge two sorted streams into one sorted stream."""
    if not len(a):
        return b
    if not len(b):
        return a
    channel = np.concatenate([a.channel, b.channel])
    timestamp = np.concatenate([a.timestamp, b.timestamp])
    ka, kb = _sort_key(a), _sort_key(b)
    if ka is None or kb is None:
        order = np.lexsort((channel, timestamp))
    else:
        # two presorted runs: timsort merges them in linear time
        order = np.argsort(np.concatenate([ka, kb]), kind="stable")
    return TimeTagStream(channel[order], timestamp[order])


def sorted_stream(channel, timestamp) -> TimeTagStream:
    """Build a stream from unordered arrays."""
    channel = np.asarray(channel, dtype=np.uint8)
    timestamp = np.asarray(timestamp, dtype=np.int64)
    order = np.lexsort((channel, timestamp))
    return TimeTagStream(channel[order], timestamp[order])
