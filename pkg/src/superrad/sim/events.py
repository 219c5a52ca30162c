from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np


class EmissionEvent(NamedTuple):
    pulse_index: int
    time_since_pulse_ps: int
    emitter_branch: int


@dataclass(frozen=True, eq=False)
class EmissionEvents:
    """Columnar store of emission events, ordered by pulse then time.

    ``emitter_branch`` is diagnostic: the ladder rung (cascade engine) or
    the jump-operator index (trajectory engine).
    ``late`` counts photons dropped for landing beyond the repetition period.
    """

    pulse_index: np.ndarray
    time_since_pulse_ps: np.ndarray
    emitter_branch: np.ndarray
    period_ps: int
    n_pulses: int
    late: int = 0
    warnings: tuple = field(default=())

    def __len__(self):
        return len(self.pulse_index)

    def __iter__(self):
        for p, t, b in zip(
            self.pulse_index.tolist(), self.time_since_pulse_ps.tolist(), self.emitter_branch.tolist()
        ):
            yield EmissionEvent(p, t, b)

    def __getitem__(self, i):
        return EmissionEvent(
            int(self.pulse_index[i]), int(self.time_since_pulse_ps[i]), int(self.emitter_branch[i])
        )

    def __eq__(self, other):
        if not isinstance(other, EmissionEvents):
            return NotImplemented
        return (
            self.period_ps == other.period_ps
            and np.array_equal(self.pulse_index, other.pulse_index)
            and np.array_equal(self.time_since_pulse_ps, other.time_since_pulse_ps)
            and np.array_equal(self.emitter_branch, other.emitter_branch)
        )

    def absolute_times(self):
        return self.pulse_index * np.int64(self.period_ps) + self.time_since_pulse_ps

    def photons_per_pulse(self):
        return np.bincount(self.pulse_index, minlength=self.n_pulses)

    @classmethod
    def collect(cls, chunks, period_ps, n_pulses, warnings=()):
        """Concatenate per-block ``(pulse, time_ns, branch)`` arrays into ordered events."""
        if chunks:
            pulse = np.concatenate([c[0] for c in chunks]).astype(np.int64)
            t_ns = np.concatenate([c[1] for c in chunks])
            branch = np.concatenate([c[2] for c in chunks]).astype(np.int32)
        else:
            pulse = np.empty(0, np.int64)
            t_ns = np.empty(0)
            branch = np.empty(0, np.int32)
        t_ps = np.rint(t_ns * 1000.0).astype(np.int64)
        keep = t_ps < period_ps
        late = int(np.count_nonzero(~keep))
        pulse, t_ps, branch = pulse[keep], t_ps[keep], branch[keep]
        order = np.lexsort((branch, t_ps, pulse))
        return cls(pulse[order], t_ps[order], branch[order], int(period_ps), int(n_pulses), late, tuple(warnings))

    @classmethod
    def concatenate(cls, parts):
        """Join event sets from consecutive pulse slices of one run."""
        first = parts[0]
        return cls(
            np.concatenate([p.pulse_index for p in parts]),
            np.concatenate([p.time_since_pulse_ps for p in parts]),
            np.concatenate([p.emitter_branch for p in parts]),
            first.period_ps,
            first.n_pulses,
            sum(p.late for p in parts),
            first.warnings,
        )
