"""Photon-pair correlation and sync-referenced lifetime histograms."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._kernels import cross_histogram
from .errors import EmptyChannelError, ValidationError
from .timetag import SYNC, TimeTagStream

DEFAULT_BIN_PS = 100
DEFAULT_SIDE_PEAKS = 10


@dataclass(frozen=True)
class PulsedNormalization:
    """Bookkeeping behind a pulsed g2(0) estimate.

    Peaks sit at multiples of ``rep_period_ps``; each is integrated over a
    window of ``window_ps`` centred on it (a full period by default).
    """

    rep_period_ps: int
    window_ps: int
    counts_a: int
    counts_b: int
    side_peaks: tuple
    central: int
    side_sums: tuple

    @property
    def side_mean(self) -> float:
        return float(np.mean(self.side_sums))


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    """Coincidence counts against delay ``tau = t_b - t_a``.

    ``counts[k]`` is centred on ``(k - K) * bin_width_ps`` with
    ``K = max_delay_ps // bin_width_ps``.
    """

    bin_width_ps: int
    max_delay_ps: int
    counts: np.ndarray
    channels: tuple = (1, 2)
    counts_a: int = 0
    counts_b: int = 0
    normalization: PulsedNormalization | None = None
    g2_of_zero: float | None = None
    g2_uncertainty: float | None = None
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, CorrelationHistogram):
            return NotImplemented
        return (
            self.bin_width_ps == other.bin_width_ps
            and self.max_delay_ps == other.max_delay_ps
            and np.array_equal(self.counts, other.counts)
        )

    @property
    def half_bins(self) -> int:
        return self.max_delay_ps // self.bin_width_ps

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(len(self.counts)) - self.half_bins) * self.bin_width_ps

    def g2(self) -> np.ndarray:
        """Counts scaled so that the mean side-peak level per bin is one."""
        if self.normalization is None:
            raise ValidationError("histogram has not been normalized")
        norm = self.normalization
        per_bin = norm.side_mean / (norm.window_ps / self.bin_width_ps)
        return self.counts / per_bin

    def to_csv(self, path, extra=None) -> None:
        meta = {
            "kind": "correlation",
            "bin_width_ps": self.bin_width_ps,
            "max_delay_ps": self.max_delay_ps,
            "channels": f"{self.channels[0]},{self.channels[1]}",
            "counts_a": self.counts_a,
            "counts_b": self.counts_b,
        }
        norm = self.normalization
        if norm is not None:
            meta.update(
                rep_period_ps=norm.rep_period_ps,
                window_ps=norm.window_ps,
                side_peaks=",".join(str(p) for p in norm.side_peaks),
                central_counts=norm.central,
                side_counts=",".join(str(s) for s in norm.side_sums),
                g2_of_zero=repr(float(self.g2_of_zero)),
                g2_uncertainty=repr(float(self.g2_uncertainty)),
            )
        meta.update(self.metadata)
        meta.update(extra or {})
        _write_csv(path, meta, self.centers, self.counts)


@dataclass(frozen=True, eq=False)
class LifetimeHistogram:
    """Detector counts against time since the most recent sync tag."""

    bin_width_ps: int
    counts: np.ndarray
    n_sync: int
    period_ps: int
    skipped: int = 0
    overflow: int = 0
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, LifetimeHistogram):
            return NotImplemented
        return self.bin_width_ps == other.bin_width_ps and np.array_equal(self.counts, other.counts)

    @property
    def edges(self) -> np.ndarray:
        return np.arange(len(self.counts) + 1) * self.bin_width_ps

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(len(self.counts)) + 0.5) * self.bin_width_ps

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self, path, extra=None) -> None:
        meta = {
            "kind": "lifetime",
            "bin_width_ps": self.bin_width_ps,
            "period_ps": self.period_ps,
            "n_sync": self.n_sync,
            "skipped": self.skipped,
            "overflow": self.overflow,
        }
        meta.update(self.metadata)
        meta.update(extra or {})
        _write_csv(path, meta, self.centers, self.counts)


def _channel_times(stream, ch):
    t = stream.timestamp[stream.channel == ch]
    if not len(t):
        raise EmptyChannelError(f"channel {ch} has no tags")
    return t


def correlate(
    stream: TimeTagStream,
    ch_a: int = 1,
    ch_b: int = 2,
    bin_width_ps: int = DEFAULT_BIN_PS,
    max_delay_ps: int | None = None,
) -> CorrelationHistogram:
    """Histogram of ``t_b - t_a`` for every tag pair with ``|tau| <= max_delay_ps``.

    Runs in one pass over both sorted channels, keeping a window of
    ``b`` tags around each ``a`` tag. ``max_delay_ps`` must be a multiple of
    the bin width so that the outermost bins are whole.
    """
    bin_width_ps = int(bin_width_ps)
    if bin_width_ps <= 0:
        raise ValidationError("bin_width_ps must be positive")
    if max_delay_ps is None:
        max_delay_ps = 50 * bin_width_ps
    max_delay_ps = int(max_delay_ps)
    if max_delay_ps <= 0 or max_delay_ps % bin_width_ps:
        raise ValidationError("max_delay_ps must be a positive multiple of bin_width_ps")
    ta = _channel_times(stream, ch_a)
    tb = _channel_times(stream, ch_b)
    half = max_delay_ps // bin_width_ps
    counts = cross_histogram(ta, tb, bin_width_ps, half, max_delay_ps, ch_a == ch_b)
    return CorrelationHistogram(
        bin_width_ps, max_delay_ps, counts, (ch_a, ch_b), len(ta), len(tb)
    )


def normalize_pulsed(
    hist: CorrelationHistogram,
    rep_period_ps: int,
    n_side_peaks: int = DEFAULT_SIDE_PEAKS,
    window_ps: int | None = None,
) -> CorrelationHistogram:
    """Attach g2(0) = central-peak counts / mean side-peak counts.

    ``n_side_peaks`` peaks are used on each side of zero. Each peak is
    integrated over ``window_ps`` centred on it; the default is one full
    repetition period. The uncertainty assumes Poisson counts in the central
    peak and in the pooled side peaks.
    """
    rep_period_ps = int(rep_period_ps)
    window_ps = rep_period_ps if window_ps in (None, 0) else int(window_ps)
    if rep_period_ps <= 0 or n_side_peaks < 1:
        raise ValidationError("need a positive period and at least one side peak")
    if window_ps <= 0 or window_ps > rep_period_ps:
        raise ValidationError("window must lie in (0, repetition period]")
    need = n_side_peaks * rep_period_ps + window_ps // 2
    if hist.max_delay_ps + hist.bin_width_ps // 2 < need:
        raise ValidationError(
            f"histogram spans +-{hist.max_delay_ps} ps but {n_side_peaks} side peaks "
            f"need +-{need} ps"
        )

    centers = hist.centers
    half_w = window_ps / 2

    def peak_sum(m):
        rel = centers - m * rep_period_ps
        # half-open so adjacent full-period windows never share a bin
        sel = (rel >= -half_w) & (rel < half_w)
        return int(hist.counts[sel].sum())

    peaks = tuple(m for m in range(-n_side_peaks, n_side_peaks + 1) if m != 0)
    sides = tuple(peak_sum(m) for m in peaks)
    central = peak_sum(0)
    side_total = sum(sides)
    if side_total == 0:
        raise ValidationError("side peaks are empty; cannot normalize")
    side_mean = side_total / len(sides)
    g2 = central / side_mean
    # zero central counts still carry one count's worth of uncertainty
    sigma = math.sqrt(max(central, 1)) / side_mean
    sigma = math.hypot(sigma, g2 / math.sqrt(side_total))
    norm = PulsedNormalization(
        rep_period_ps, window_ps, hist.counts_a, hist.counts_b, peaks, central, sides
    )
    return dataclasses.replace(hist, normalization=norm, g2_of_zero=g2, g2_uncertainty=sigma)


def infer_period(stream: TimeTagStream) -> int | None:
    """Median sync spacing, or None with fewer than two sync tags."""
    sync = stream.timestamp[stream.channel == SYNC]
    if len(sync) < 2:
        return None
    return int(np.median(np.diff(sync)))


def lifetime_histogram(
    stream: TimeTagStream,
    detector_channels=(1, 2),
    bin_width_ps: int = DEFAULT_BIN_PS,
    period_ps: int | None = None,
) -> LifetimeHistogram:
    """Accumulate ``t_tag - t_last_sync`` for every detector tag.

    Tags that precede the first sync are skipped and counted in ``skipped``;
    delays of a full period or more (missing syncs) land in ``overflow``.
    """
    bin_width_ps = int(bin_width_ps)
    if bin_width_ps <= 0:
        raise ValidationError("bin_width_ps must be positive")
    sync = stream.timestamp[stream.channel == SYNC]
    det_mask = np.isin(stream.channel, np.asarray(detector_channels, dtype=np.uint8))
    tags = stream.timestamp[det_mask]
    if not len(sync):
        raise ValidationError("stream has no sync channel; a lifetime histogram needs channel 0")
    if period_ps is None:
        period_ps = infer_period(stream)
        if period_ps is None:
            raise ValidationError("cannot infer the repetition period from a single sync tag")
    nbins = -(-int(period_ps) // bin_width_ps)

    idx = np.searchsorted(sync, tags, side="right") - 1
    skipped = int(np.count_nonzero(idx < 0))
    delays = tags[idx >= 0] - sync[idx[idx >= 0]]
    in_range = delays < period_ps
    overflow = int(np.count_nonzero(~in_range))
    counts = np.bincount(delays[in_range] // bin_width_ps, minlength=nbins).astype(np.int64)
    return LifetimeHistogram(bin_width_ps, counts, len(sync), int(period_ps), skipped, overflow)


def _write_csv(path, meta, centers, counts):
    lines = [f"# {k}={v}" for k, v in meta.items()]
    lines.append("bin_center_ps,counts")
    for c, n in zip(centers.tolist(), counts.tolist()):
        c = int(c) if float(c).is_integer() else c
        lines.append(f"{c},{int(n)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_int_tuple(text):
    return tuple(int(v) for v in text.split(",")) if text else ()


def read_histogram_csv(path):
    """Load a histogram written by ``to_csv``; returns the matching type."""
    meta, centers, counts = {}, [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip() and not line.startswith("bin_center_ps"):
            try:
                c, n = line.split(",")
                centers.append(float(c))
                counts.append(int(n))
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed row {line!r}") from exc
    kind = meta.pop("kind", None)
    counts = np.array(counts, dtype=np.int64)
    try:
        if kind == "lifetime":
            known = ("bin_width_ps", "period_ps", "n_sync", "skipped", "overflow")
            return LifetimeHistogram(
                int(meta["bin_width_ps"]),
                counts,
                int(meta["n_sync"]),
                int(meta["period_ps"]),
                int(meta.get("skipped", 0)),
                int(meta.get("overflow", 0)),
                {k: v for k, v in meta.items() if k not in known},
            )
        if kind == "correlation":
            known = (
                "bin_width_ps", "max_delay_ps", "channels", "counts_a", "counts_b",
                "rep_period_ps", "window_ps", "side_peaks", "central_counts",
                "side_counts", "g2_of_zero", "g2_uncertainty",
            )
            norm = None
            g2 = sigma = None
            if "rep_period_ps" in meta:
                norm = PulsedNormalization(
                    int(meta["rep_period_ps"]),
                    int(meta["window_ps"]),
                    int(meta["counts_a"]),
                    int(meta["counts_b"]),
                    _parse_int_tuple(meta["side_peaks"]),
                    int(meta["central_counts"]),
                    _parse_int_tuple(meta["side_counts"]),
                )
                g2 = float(meta["g2_of_zero"])
                sigma = float(meta["g2_uncertainty"])
            return CorrelationHistogram(
                int(meta["bin_width_ps"]),
                int(meta["max_delay_ps"]),
                counts,
                _parse_int_tuple(meta["channels"]),
                int(meta["counts_a"]),
                int(meta["counts_b"]),
                norm,
                g2,
                sigma,
                {k: v for k, v in meta.items() if k not in known},
            )
    except KeyError as exc:
        raise ValidationError(f"{path}: missing metadata field {exc.args[0]}") from exc
    raise ValidationError(f"{path}: unknown histogram kind {kind!r}")
