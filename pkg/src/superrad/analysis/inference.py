"""Emitter-number and cooperativity inference from g2(0) and decay figures."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import ValidationError

REFERENCE_LIFETIME_NS = 1.85
# |rate enhancement - 1| below this counts as unshortened when the fit error is tiny
RATE_TOLERANCE = 0.05
MAX_SCAN = 10_000


class Verdict(str, Enum):
    SINGLE = "single"
    INDEPENDENT = "independent"
    COOPERATIVE = "cooperative"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class CooperativityReport:
    g2_zero: float
    g2_uncertainty: float
    n_min_independent: int | None
    n_candidate_cooperative: int | None
    bunching_excess: float
    rate_enhancement: float
    intensity_enhancement: float
    verdict: Verdict
    rate_uncertainty: float = 0.0
    classically_bunched: bool = False
    notes: tuple = field(default=())

    def as_fields(self) -> dict:
        return {
            "g2_zero": self.g2_zero,
            "g2_uncertainty": self.g2_uncertainty,
            "n_min_independent": self.n_min_independent,
            "n_candidate_cooperative": self.n_candidate_cooperative,
            "bunching_excess": self.bunching_excess,
            "rate_enhancement": self.rate_enhancement,
            "rate_uncertainty": self.rate_uncertainty,
            "intensity_enhancement": self.intensity_enhancement,
            "verdict": self.verdict.value,
        }


def independent_bound(n: int) -> float:
    """g2(0) of n independent identical emitters."""
    return 1.0 - 1.0 / n


def min_independent_emitters(g2_zero: float, uncertainty: float = 0.0) -> int | None:
    """Smallest N with 1 - 1/N >= g2(0) - uncertainty; None when no finite N works."""
    x = g2_zero - uncertainty
    if x <= 0:
        return 1
    if x >= 1:
        return None
    n = math.ceil(1.0 / (1.0 - x) - 1e-12)
    while independent_bound(n) < x:
        n += 1
    while n > 1 and independent_bound(n - 1) >= x:
        n -= 1
    return n


def infer_emitter_number(
    g2_zero: float,
    uncertainty: float,
    rate_enhancement: float = 1.0,
    intensity_enhancement: float = float("nan"),
    rate_uncertainty: float = 0.0,
    rate_tolerance: float = RATE_TOLERANCE,
) -> CooperativityReport:
    """Classify a measured g2(0) plus decay speed-up.

    The cooperative candidate is the smallest N >= 2 whose independent bound
    1 - 1/N does not exceed g2(0) and for which 1 < rate_enhancement <= N.
    Verdicts:

    * single: g2(0) below 0.5 by more than 2 sigma;
    * cooperative: excess over the candidate's bound beyond 2 sigma *and*
      rate enhancement above 1 by more than 2 sigma;
    * independent: unshortened decay and g2(0) within 2 sigma of some 1 - 1/N;
    * undetermined otherwise, including classically bunched light.
    """
    if not g2_zero >= 0:
        raise ValidationError("g2_zero must be nonnegative")
    if not uncertainty > 0:
        raise ValidationError("uncertainty must be positive")
    notes = []
    n_min = min_independent_emitters(g2_zero, uncertainty)

    candidate = None
    for n in range(2, MAX_SCAN):
        if independent_bound(n) > g2_zero:
            break
        if 1.0 < rate_enhancement <= n:
            candidate = n
            break
    raw_excess = g2_zero - independent_bound(candidate) if candidate else 0.0
    significant = candidate is not None and raw_excess > 2 * uncertainty
    excess = raw_excess if significant else 0.0

    rate_sigma = max(rate_uncertainty, 0.0)
    shortened = rate_enhancement > 1.0 + 2 * rate_sigma
    unshortened = abs(rate_enhancement - 1.0) <= max(2 * rate_sigma, rate_tolerance)
    bunched = g2_zero > 1.0 + 3 * uncertainty

    if bunched:
        verdict = Verdict.UNDETERMINED
        notes.append("g2(0) above 1: classically bunched light")
    elif g2_zero < 0.5 - 2 * uncertainty:
        verdict = Verdict.SINGLE
    elif significant and shortened:
        verdict = Verdict.COOPERATIVE
    elif unshortened and _near_some_bound(g2_zero, uncertainty):
        verdict = Verdict.INDEPENDENT
    else:
        verdict = Verdict.UNDETERMINED
    if verdict is Verdict.SINGLE:
        n_min = 1

    return CooperativityReport(
        g2_zero=float(g2_zero),
        g2_uncertainty=float(uncertainty),
        n_min_independent=n_min,
        n_candidate_cooperative=candidate,
        bunching_excess=float(excess),
        rate_enhancement=float(rate_enhancement),
        intensity_enhancement=float(intensity_enhancement),
        verdict=verdict,
        rate_uncertainty=float(rate_sigma),
        classically_bunched=bunched,
        notes=tuple(notes),
    )


def _near_some_bound(g2, sigma):
    if g2 >= 1 - 2 * sigma:
        return True
    n = min_independent_emitters(g2, 0.0) or 1
    return any(abs(g2 - independent_bound(m)) <= 2 * sigma for m in (max(n - 1, 2), max(n, 2)))


@dataclass(frozen=True)
class ScalingResult:
    exponent: float
    uncertainty: float
    n_values: tuple
    amplitudes: tuple


def intensity_scaling(traces, irf_fwhm_ps=None) -> ScalingResult:
    """Power-law exponent of peak amplitude against emitter number.

    ``traces`` holds ``(N, trace)`` pairs where ``trace`` is an
    IntensityTrace or a bare amplitude. The exponent comes from ordinary
    least squares on log amplitude versus log N; its 1-sigma error from the
    residual scatter.
    """
    ns, amps = [], []
    for n, trace in traces:
        amp = float(trace) if np.isscalar(trace) else trace.peak_amplitude(irf_fwhm_ps)
        if not (n >= 1 and amp > 0):
            raise ValidationError("emitter numbers and amplitudes must be positive")
        ns.append(float(n))
        amps.append(amp)
    if len(set(ns)) < 3:
        raise ValidationError("intensity scaling needs at least three distinct emitter numbers")
    x, y = np.log(ns), np.log(amps)
    xm = x - x.mean()
    sxx = float(xm @ xm)
    slope = float(xm @ (y - y.mean())) / sxx
    resid = y - y.mean() - slope * xm
    dof = len(x) - 2
    sigma = math.sqrt(float(resid @ resid) / dof / sxx) if dof > 0 else float("nan")
    return ScalingResult(slope, sigma, tuple(ns), tuple(amps))
