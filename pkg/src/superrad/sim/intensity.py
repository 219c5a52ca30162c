from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..correlator import LifetimeHistogram, lifetime_histogram
from ..timetag import TimeTagStream


@dataclass(frozen=True, eq=False)
class IntensityTrace:
    """Photon counts against time since sync, summed over both detectors."""

    bin_width_ps: int
    counts: np.ndarray
    period_ps: int = 25_000
    n_sync: int = 0

    @classmethod
    def from_stream(cls, stream: TimeTagStream, bin_width_ps=100, detector_channels=(1, 2)):
        return cls.from_histogram(lifetime_histogram(stream, detector_channels, bin_width_ps))

    @classmethod
    def from_histogram(cls, hist: LifetimeHistogram):
        return cls(hist.bin_width_ps, np.asarray(hist.counts), hist.period_ps, hist.n_sync)

    def to_histogram(self) -> LifetimeHistogram:
        return LifetimeHistogram(self.bin_width_ps, np.asarray(self.counts), self.n_sync, self.period_ps)

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))

    def peak_amplitude(self, irf_fwhm_ps=None) -> float:
        """Peak PL amplitude in counts per bin.

        Without an IRF this is the raw histogram maximum. With one it is the
        amplitude of a mono-exponential fit, i.e. the peak the decay would
        have with the instrument response removed.
        """
        if irf_fwhm_ps is None:
            return float(np.max(self.counts))
        from ..analysis.fitting import fit_decay

        return fit_decay(self.to_histogram(), irf_fwhm_ps, "mono").peak_amplitude
