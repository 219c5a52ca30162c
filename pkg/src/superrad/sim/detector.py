"""Beam splitter, SPAD, and time-tagger model turning emission events into tags."""
from __future__ import annotations

import numpy as np

from .._kernels import apply_dead_time
from ..timetag import SYNC, TimeTagStream
from .config import DetectorChainConfig, PulseTrainConfig
from .events import EmissionEvents


def _detector_tags(times, chain, dark_span_ps, rng):
    """Add dark counts to one channel's photon tags, sort, and enforce dead time."""
    if chain.dark_count_rate_Hz > 0:
        n_dark = rng.poisson(chain.dark_count_rate_Hz * dark_span_ps * 1e-12)
        dark = rng.integers(0, dark_span_ps, size=n_dark, dtype=np.int64)
        times = np.concatenate([times, dark])
    times = np.sort(times)
    dead_ps = int(round(chain.dead_time_ns * 1000))
    if dead_ps > 0 and len(times):
        times = times[apply_dead_time(times, dead_ps)]
    return times


def apply_detector_chain(
    events: EmissionEvents, pulses: PulseTrainConfig, chain: DetectorChainConfig
) -> TimeTagStream:
    """Detected time tags plus one sync tag per pulse on channel 0.

    Every photon survives with ``detection_efficiency``, goes to channel 1
    with probability ``splitter_ratio`` (else channel 2), picks up a Gaussian
    timing jitter of width ``irf_fwhm_ps`` and the common detector delay, then
    each channel applies its dead time. Dark counts are uniform over the run
    and pass through the same dead time.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(chain.rng_seed))))
    period = pulses.period_ps
    span = pulses.n_pulses * period

    t = events.absolute_times()
    detected = rng.random(len(t)) < chain.detection_efficiency
    t = t[detected]
    to_first = rng.random(len(t)) < chain.splitter_ratio
    if chain.irf_fwhm_ps > 0:
        t = t + np.rint(rng.normal(0.0, chain.irf_sigma_ps, size=len(t))).astype(np.int64)
    t = t + int(chain.detector_delay_ps)

    ch1 = _detector_tags(t[to_first], chain, span, rng)
    ch2 = _detector_tags(t[~to_first], chain, span, rng)
    sync = np.arange(pulses.n_pulses, dtype=np.int64) * period

    timestamp = np.concatenate([sync, ch1, ch2])
    channel = np.concatenate(
        [
            np.full(len(sync), SYNC, np.uint8),
            np.full(len(ch1), 1, np.uint8),
            np.full(len(ch2), 2, np.uint8),
        ]
    )
    order = np.lexsort((channel, timestamp))
    return TimeTagStream(channel[order], timestamp[order])
