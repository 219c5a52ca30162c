"""End-to-end helpers shared by the CLI and the reproduction suite."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

from .analysis.fitting import DecayFitResult, fit_decay
from .analysis.inference import REFERENCE_LIFETIME_NS, CooperativityReport, infer_emitter_number
from .correlator import (
    CorrelationHistogram,
    LifetimeHistogram,
    correlate,
    infer_period,
    lifetime_histogram,
    normalize_pulsed,
)
from .emitters import DecayMatrix, EmitterEnsemble, build_decay_matrix, dicke_ladder
from .errors import ValidationError
from .sim.cascade import simulate_dicke_cascade
from .sim.config import RunConfig
from .sim.detector import apply_detector_chain
from .sim.events import EmissionEvents
from .sim.trajectories import simulate_trajectories
from .timetag import TimeTagStream

# g2(0) integration window used by the CLI; a full period hides the antidip
DEFAULT_G2_WINDOW_PS = 1000


def decay_matrix_for(cfg: RunConfig, geometry: EmitterEnsemble | None = None) -> DecayMatrix:
    """Decay matrix for the trajectory engine: from geometry, else from the regime."""
    if geometry is not None:
        return build_decay_matrix(geometry, include_coupling=cfg.include_coupling)
    g0 = 1.0 / cfg.tau_ns
    if cfg.regime == "dicke":
        return DecayMatrix.dicke_limit(cfg.n, g0)
    return DecayMatrix.independent(cfg.n, g0)


def emitter_count(cfg: RunConfig, geometry: EmitterEnsemble | None = None) -> int:
    n = geometry.n if geometry is not None else cfg.n
    return n * cfg.replicas if cfg.engine == "dicke" else n


def simulate_events(cfg: RunConfig, geometry: EmitterEnsemble | None = None) -> EmissionEvents:
    """Emission record for a run.

    The ``dicke`` engine samples the symmetric ladder of ``n`` emitters (or
    of the geometry's emitter count and rate), stacked ``replicas`` times;
    in the independent regime it stacks ``n * replicas`` one-emitter ladders.
    The ``trajectory`` engine takes its decay matrix from the geometry when
    one is given, else from ``regime``.
    """
    if cfg.engine == "dicke":
        n = geometry.n if geometry is not None else cfg.n
        g0 = geometry.gamma0_per_ns if geometry is not None else 1.0 / cfg.tau_ns
        replicas = cfg.replicas
        if cfg.regime == "independent" and geometry is None:
            n, replicas = 1, cfg.n * cfg.replicas
        return simulate_dicke_cascade(dicke_ladder(n, g0), cfg.pulses, cfg.seed, replicas)
    if cfg.replicas != 1:
        raise ValidationError("replicas are only supported by the dicke engine")
    return simulate_trajectories(decay_matrix_for(cfg, geometry), cfg.pulses, cfg.seed)


def simulate_stream(cfg: RunConfig, geometry: EmitterEnsemble | None = None):
    """Run a configuration through the detector chain; returns ``(stream, events)``."""
    events = simulate_events(cfg, geometry)
    return apply_detector_chain(events, cfg.pulses, cfg.detector), events


def g2_histogram(
    stream: TimeTagStream,
    bin_width_ps: int = 100,
    n_side_peaks: int = 10,
    window_ps: int | None = DEFAULT_G2_WINDOW_PS,
    period_ps: int | None = None,
    max_delay_ps: int | None = None,
) -> CorrelationHistogram:
    """Cross-correlate detectors 1 and 2 and normalize to the side peaks."""
    period = period_ps or infer_period(stream)
    if period is None:
        raise ValidationError("cannot normalize g2 without a repetition period (no sync tags)")
    if max_delay_ps is None:
        reach = n_side_peaks * period + period // 2
        max_delay_ps = -(-reach // bin_width_ps) * bin_width_ps
    hist = correlate(stream, 1, 2, bin_width_ps, max_delay_ps)
    return normalize_pulsed(hist, period, n_side_peaks, window_ps)


@dataclass(frozen=True)
class RunAnalysis:
    """Fit and inference for one source."""

    source: str
    n_emitters: int | None
    fit: DecayFitResult | None
    g2: CorrelationHistogram | None
    report: CooperativityReport | None
    amplitude: float = math.nan

    def as_fields(self) -> dict:
        out = {"source": self.source, "n_emitters": "" if self.n_emitters is None else self.n_emitters}
        if self.fit is not None:
            f = self.fit
            out.update(
                model=f.model + (" (collapsed)" if f.collapsed else ""),
                lifetime_ns=f.lifetime_ns,
                lifetime_uncertainty_ns=f.lifetime_uncertainty_ns,
                slow_lifetime_ns=f.lifetimes_ns[1] if len(f.lifetimes_ns) > 1 else "",
                peak_amplitude=f.peak_amplitude,
                reduced_chi2=f.goodness,
            )
        if self.report is not None:
            out.update(self.report.as_fields())
        elif self.g2 is not None:
            out.update(g2_zero=self.g2.g2_of_zero, g2_uncertainty=self.g2.g2_uncertainty)
        return out


def analyze_run(
    source: str,
    lifetime: LifetimeHistogram | None,
    g2: CorrelationHistogram | None,
    n_emitters: int | None = None,
    irf_fwhm_ps: float | None = 500.0,
    model_policy: str = "auto",
    tau_ref_ns: float = REFERENCE_LIFETIME_NS,
    amplitude_ref: float | None = None,
) -> RunAnalysis:
    """Fit the decay and classify the source.

    Rate enhancement is ``tau_ref_ns`` over the fitted effective lifetime.
    Intensity enhancement is the fitted peak amplitude over
    ``amplitude_ref`` and is NaN without a reference.
    """
    if lifetime is None and g2 is None:
        raise ValidationError(f"{source}: nothing to analyze")
    fit = fit_decay(lifetime, irf_fwhm_ps, model_policy) if lifetime is not None else None
    amp = fit.peak_amplitude if fit is not None else math.nan
    report = None
    if g2 is not None:
        if g2.g2_of_zero is None:
            raise ValidationError(f"{source}: correlation histogram is not normalized")
        if fit is not None:
            rate = tau_ref_ns / fit.lifetime_ns
            rate_sigma = rate * fit.lifetime_uncertainty_ns / fit.lifetime_ns
        else:
            rate, rate_sigma = math.nan, 0.0
        intensity = amp / amplitude_ref if amplitude_ref else math.nan
        report = infer_emitter_number(
            g2.g2_of_zero, g2.g2_uncertainty, rate, intensity, rate_sigma
        )
    return RunAnalysis(source, n_emitters, fit, g2, report, amp)


def with_reference(run: RunAnalysis, amplitude_ref: float) -> RunAnalysis:
    """Recompute the intensity enhancement against a new reference amplitude."""
    if run.report is None or not amplitude_ref:
        return run
    report = dataclasses.replace(run.report, intensity_enhancement=run.amplitude / amplitude_ref)
    return dataclasses.replace(run, report=report)


def analyze_stream(stream: TimeTagStream, source="stream", **kwargs) -> RunAnalysis:
    life = lifetime_histogram(stream)
    g2 = g2_histogram(stream, window_ps=kwargs.pop("window_ps", DEFAULT_G2_WINDOW_PS))
    return analyze_run(source, life, g2, **kwargs)
