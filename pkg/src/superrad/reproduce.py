"""Desk-scale reproduction suite: single emitter and ensemble, separated
versus confined pairs, and Dicke-limit runs for N = 1..4."""
from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis.inference import intensity_scaling
from .correlator import lifetime_histogram
from .emitters import EmitterEnsemble, write_geometry
from .errors import SuperradError
from .manifest import manifest_path, write_manifest
from .pipeline import DEFAULT_G2_WINDOW_PS, analyze_run, emitter_count, g2_histogram, simulate_stream
from .sim.config import RUN_DETECTOR, PulseTrainConfig, RunConfig
from .timetag import write_stream

WAVELENGTH_NM = 436.0
TAU_NS = 1.85
ENSEMBLE_EFFICIENCY = 0.05
ENSEMBLE_REPLICAS = 50
SEPARATED_NM = 5 * WAVELENGTH_NM
CONFINED_NM = 20.0

SUMMARY_FIELDS = (
    "run", "engine", "n_emitters", "pulses", "efficiency",
    "g2_zero", "g2_uncertainty", "model", "lifetime_ns", "lifetime_uncertainty_ns",
    "rate_enhancement", "amplitude_per_pulse", "intensity_enhancement",
    "n_min_independent", "n_candidate_cooperative", "verdict",
)


@dataclass(frozen=True)
class Run:
    name: str
    config: RunConfig
    geometry: EmitterEnsemble | None = None


def _pair(separation_nm):
    # dipoles along x, pair offset along y: the transverse, in-plane configuration
    return EmitterEnsemble.from_positions(
        [[0.0, 0.0, 0.0], [0.0, separation_nm, 0.0]], WAVELENGTH_NM, 1.0 / TAU_NS
    )


def plan(seed: int = 0, pulses: int = 1_000_000) -> list[Run]:
    """The runs of the suite, each with its own derived seed."""
    det = RUN_DETECTOR
    base = RunConfig(tau_ns=TAU_NS, pulses=PulseTrainConfig(n_pulses=pulses))

    def cfg(k, **kw):
        run_seed = int(np.random.SeedSequence([seed, k]).generate_state(1, np.uint64)[0])
        detector = dataclasses.replace(det, rng_seed=run_seed, **kw.pop("detector", {}))
        return dataclasses.replace(base, seed=run_seed, detector=detector, **kw)

    ens_pulses = PulseTrainConfig(n_pulses=max(pulses // 10, 1))
    runs = [
        Run("single_emitter", cfg(1, engine="dicke", n=1)),
        Run(
            "ensemble_50",
            cfg(
                2, engine="dicke", n=1, replicas=ENSEMBLE_REPLICAS, pulses=ens_pulses,
                detector={"detection_efficiency": ENSEMBLE_EFFICIENCY},
            ),
        ),
        Run("pair_separated", cfg(3, engine="trajectory", n=2), _pair(SEPARATED_NM)),
        Run("pair_confined", cfg(4, engine="trajectory", n=2), _pair(CONFINED_NM)),
    ]
    runs += [Run(f"dicke_n{n}", cfg(10 + n, engine="dicke", n=n)) for n in range(1, 5)]
    return runs


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else repr(value)
    return str(value)


def run_suite(out_dir, seed: int = 0, pulses: int = 1_000_000, irf_fwhm_ps: float = 500.0,
              window_ps: int = DEFAULT_G2_WINDOW_PS, log=None):
    """Simulate, correlate, and analyze every run; write the summary table.

    Returns the list of summary rows. All outputs are deterministic under
    ``seed`` and ``pulses``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, analyses = [], {}
    for run in plan(seed, pulses):
        run_dir = out / run.name
        run_dir.mkdir(exist_ok=True)
        inputs = []
        if run.geometry is not None:
            geom = run_dir / "geometry.txt"
            write_geometry(run.geometry, geom)
            inputs.append(geom)
        stream, events = simulate_stream(run.config, run.geometry)
        stream_path = run_dir / "stream.ttg"
        write_stream(stream, stream_path)
        n_em = emitter_count(run.config, run.geometry)
        meta = {"source": run.name, "n_emitters": n_em}

        life = lifetime_histogram(stream)
        g2 = g2_histogram(stream, window_ps=window_ps)
        life_path, g2_path = run_dir / "lifetime.csv", run_dir / "g2.csv"
        life.to_csv(life_path, meta)
        g2.to_csv(g2_path, meta)
        write_manifest(
            manifest_path(stream_path), "reproduce", _run_config(run),
            inputs, [stream_path, life_path, g2_path], run.config.seed,
        )
        try:
            analysis = analyze_run(run.name, life, g2, n_em, irf_fwhm_ps)
        except SuperradError as exc:
            analysis = None
            if log:
                log(f"{run.name}: analysis failed: {exc}")
        analyses[run.name] = (run, analysis, len(events))
        if log:
            log(f"{run.name}: {len(stream)} tags, {events.late} late photons dropped")

    def per_pulse(run, a):
        # peak amplitude per pulse at unit detection efficiency
        return a.amplitude / (run.config.detector.detection_efficiency * run.config.pulses.n_pulses)

    ref_run, ref_a, _ = analyses["single_emitter"]
    ref_amp = per_pulse(ref_run, ref_a) if ref_a else math.nan
    for name, (run, a, _) in analyses.items():
        eff = run.config.detector.detection_efficiency
        row = dict.fromkeys(SUMMARY_FIELDS, "")
        row.update(
            run=name, engine=run.config.engine, n_emitters=emitter_count(run.config, run.geometry),
            pulses=run.config.pulses.n_pulses, efficiency=eff,
        )
        if a is not None:
            fields = a.as_fields()
            amp = per_pulse(run, a)
            row.update({k: fields[k] for k in SUMMARY_FIELDS if k in fields})
            row.update(amplitude_per_pulse=amp, intensity_enhancement=amp / ref_amp)
        rows.append(row)

    scaling = None
    ladder = [(analyses[f"dicke_n{n}"][1], n) for n in range(1, 5)]
    if all(a is not None for a, _ in ladder):
        scaling = intensity_scaling([(n, a.amplitude) for a, n in ladder])

    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_FIELDS)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in SUMMARY_FIELDS])
    (out / "summary.txt").write_text(_summary_text(rows, scaling, window_ps))
    write_manifest(
        out / "reproduce.manifest.json", "reproduce",
        {"pulses": pulses, "irf_fwhm_ps": irf_fwhm_ps, "window_ps": window_ps},
        [], [out / "summary.csv", out / "summary.txt"], seed,
    )
    return rows, scaling


def _run_config(run):
    cfg = run.config.as_dict()
    cfg["n_emitters"] = emitter_count(run.config, run.geometry)
    return cfg


def _summary_text(rows, scaling, window_ps):
    cols = ("run", "n_emitters", "g2_zero", "g2_uncertainty", "lifetime_ns",
            "lifetime_uncertainty_ns", "intensity_enhancement", "verdict")
    fmt = {"g2_zero": "{:.3f}", "g2_uncertainty": "{:.3f}", "lifetime_ns": "{:.3f}",
           "lifetime_uncertainty_ns": "{:.4f}", "intensity_enhancement": "{:.2f}"}
    table = [cols]
    for row in rows:
        table.append(tuple(
            fmt[c].format(row[c]) if c in fmt and row[c] != "" else str(row[c]) for c in cols
        ))
    widths = [max(len(r[i]) for r in table) for i in range(len(cols))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    lines.append("")
    lines.append(f"g2(0) integrated over +-{window_ps / 2:g} ps around each peak" if window_ps
                 else "g2(0) integrated over full repetition periods")
    if scaling is not None:
        lines.append(
            f"Dicke-limit peak amplitude scaling, N = 1..4: alpha = {scaling.exponent:.3f} "
            f"+- {scaling.uncertainty:.3f}"
        )
    return "\n".join(lines) + "\n"
