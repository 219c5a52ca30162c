"""Exact sampler for the symmetric Dicke ladder."""
from __future__ import annotations

import numpy as np

from ..emitters import DickeLadder
from .config import PulseTrainConfig, block_ranges, block_rng
from .events import EmissionEvents

CASCADE_STREAM = 1


def simulate_dicke_cascade(
    ladder: DickeLadder,
    pulses: PulseTrainConfig,
    seed: int,
    replicas: int = 1,
    pulse_slice=None,
) -> EmissionEvents:
    """Photon emission times for a fully inverted ladder after every pulse.

    Each excited pulse emits ``ladder.n_emitters`` photons whose successive
    waiting times are exponential with the ladder rates, top rung first.
    ``replicas`` independent copies of the ladder are stacked per pulse
    (``replicas=50`` on a one-emitter ladder is a 50-emitter uncorrelated
    ensemble); each copy is excited with ``pulses.excitation_probability``.
    Branch ids are ``replica * N + rung``.
    """
    rates = np.asarray(ladder.rates, dtype=float)
    n = ladder.n_emitters
    p_exc = pulses.excitation_probability
    chunks = []
    for block, lo, hi in block_ranges(pulses.n_pulses, pulse_slice):
        rng = block_rng(seed, block, CASCADE_STREAM)
        count = hi - lo
        waits = rng.standard_exponential((count, replicas, n)) / rates
        times = np.cumsum(waits, axis=2)
        pulse = np.broadcast_to(np.arange(lo, hi)[:, None, None], times.shape)
        branch = np.broadcast_to(
            (np.arange(replicas)[:, None] * n + np.arange(n))[None], times.shape
        )
        if p_exc < 1.0:
            excited = rng.random((count, replicas)) < p_exc
            mask = np.broadcast_to(excited[:, :, None], times.shape)
            chunks.append((pulse[mask], times[mask], branch[mask]))
        else:
            chunks.append((pulse.ravel(), times.ravel(), branch.ravel()))
    warnings = pulses.check_lifetime(1.0 / ladder.gamma0)
    return EmissionEvents.collect(chunks, pulses.period_ps, pulses.n_pulses, warnings)
