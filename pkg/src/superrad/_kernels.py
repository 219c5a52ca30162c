"""Compiled inner loops. Each has a plain-Python twin in the test suite."""
import numpy as np
from numba import njit


@njit(cache=True)
def apply_dead_time(times, dead_ps):
    """Non-paralyzable dead time over sorted ``times``; returns a keep mask."""
    keep = np.zeros(times.shape[0], dtype=np.bool_)
    last = 0
    have_last = False
    for i in range(times.shape[0]):
        if not have_last or times[i] - last >= dead_ps:
            keep[i] = True
            last = times[i]
            have_last = True
    return keep


@njit(cache=True)
def cross_histogram(ta, tb, bin_width, half_bins, max_delay, exclude_same_index):
    """Sliding-window pair histogram of ``tb - ta`` over sorted inputs.

    Bin ``k`` is centred on ``(k - half_bins) * bin_width``. Pairs with
    ``|tau| > max_delay`` are ignored. When both arrays are the same channel
    the diagonal ``i == j`` is skipped.
    """
    nbins = 2 * half_bins + 1
    counts = np.zeros(nbins, dtype=np.int64)
    offset = half_bins * bin_width + bin_width // 2
    lo = 0
    nb = tb.shape[0]
    for i in range(ta.shape[0]):
        a = ta[i]
        while lo < nb and tb[lo] < a - max_delay:
            lo += 1
        j = lo
        while j < nb and tb[j] <= a + max_delay:
            if not (exclude_same_index and i == j):
                k = (tb[j] - a + offset) // bin_width
                counts[k] += 1
            j += 1
    return counts
