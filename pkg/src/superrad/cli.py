"""Command-line entry point: ``superrad simulate|correlate|analyze|plmap|reproduce``.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error,
3 numerical failure. Errors are reported on stderr as a single line
``error: kind=<Class> code=<n> message=<json string>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from collections import OrderedDict
from pathlib import Path

from . import __version__
from .analysis.inference import intensity_scaling
from .analysis.spots import ThresholdPolicy, detect_spots
from .correlator import (
    LifetimeHistogram,
    correlate,
    infer_period,
    lifetime_histogram,
    normalize_pulsed,
    read_histogram_csv,
)
from .emitters import read_geometry
from .errors import FitError, SuperradError, TimeTagFormatError, ValidationError
from .manifest import manifest_path, read_manifest, write_manifest
from .pipeline import DEFAULT_G2_WINDOW_PS, analyze_run, emitter_count, simulate_stream, with_reference
from .sim.config import build_run_config, parse_key_values
from .sim.plmap import Grid, render_pl_map, write_raster_csv
from .timetag import read_stream, write_stream

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(f"{self.prog}: {message}")


def _count(text):
    """Integer that may be written in float notation, e.g. ``1e6``."""
    val = float(text)
    if not val.is_integer() or val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(val)


def _elapsed(args, t0):
    return time.perf_counter() - t0 if args.record_timing else None


# ---------------------------------------------------------------- simulate

_SIM_FLAGS = {
    "engine": "engine", "n": "n", "tau_ns": "tau_ns", "regime": "regime",
    "replicas": "replicas", "seed": "seed", "pulses": "n_pulses",
    "rep_rate_mhz": "repetition_rate_MHz", "excitation_probability": "excitation_probability",
    "irf_ps": "irf_fwhm_ps", "efficiency": "detection_efficiency",
    "splitter": "splitter_ratio", "dead_time_ns": "dead_time_ns",
    "dark_hz": "dark_count_rate_Hz", "detector_seed": "rng_seed",
    "detector_delay_ps": "detector_delay_ps",
}


def cmd_simulate(args):
    t0 = time.perf_counter()
    values = {}
    if args.config:
        values.update(parse_key_values(Path(args.config).read_text(), args.config))
    for flag, key in _SIM_FLAGS.items():
        v = getattr(args, flag)
        if v is not None:
            values[key] = v
    if args.include_coupling:
        values["include_coupling"] = True
    if "rng_seed" not in values:
        values["rng_seed"] = values.get("seed", 0)
    cfg = build_run_config(values)
    geometry = read_geometry(args.geometry) if args.geometry else None

    stream, events = simulate_stream(cfg, geometry)
    out = Path(args.output)
    write_stream(stream, out)
    config = cfg.as_dict()
    config["n_emitters"] = emitter_count(cfg, geometry)
    inputs = [p for p in (args.config, args.geometry) if p]
    write_manifest(manifest_path(out), "simulate", config, inputs, [out], cfg.seed, _elapsed(args, t0))
    for w in events.warnings:
        print(f"warning: {w}", file=sys.stderr)
    counts = stream.counts_per_channel()
    print(
        f"{out}: {len(events)} photons emitted, {events.late} late, "
        f"tags per channel {counts}"
    )


# ---------------------------------------------------------------- correlate

def _stream_metadata(path):
    meta = {"source": Path(path).stem}
    mpath = manifest_path(path)
    if mpath.exists():
        try:
            cfg = read_manifest(mpath).get("config", {})
        except (ValueError, OSError):
            cfg = {}
        for key in ("n_emitters", "engine", "regime", "seed"):
            if key in cfg:
                meta[key] = cfg[key]
    return meta


def cmd_correlate(args):
    t0 = time.perf_counter()
    stream = read_stream(args.stream)
    prefix = Path(args.output_prefix) if args.output_prefix else Path(args.stream).with_suffix("")
    meta = _stream_metadata(args.stream)
    outputs = []

    period = args.period_ps or infer_period(stream)
    life = None
    if args.lifetime:
        life = lifetime_histogram(stream, bin_width_ps=args.bin_ps, period_ps=args.period_ps)

    max_delay = args.max_delay_ps
    if max_delay is None:
        reach = args.side_peaks * period + period // 2 if period else 50 * args.bin_ps
        max_delay = -(-reach // args.bin_ps) * args.bin_ps
    hist = correlate(stream, 1, 2, args.bin_ps, max_delay)
    if period:
        hist = normalize_pulsed(hist, period, args.side_peaks, args.window_ps or None)
    g2_path = Path(f"{prefix}.g2.csv")
    hist.to_csv(g2_path, meta)
    outputs.append(g2_path)
    if life is not None:
        life_path = Path(f"{prefix}.lifetime.csv")
        life.to_csv(life_path, meta)
        outputs.append(life_path)

    config = {k: getattr(args, k) for k in ("bin_ps", "side_peaks", "window_ps", "period_ps", "lifetime")}
    config["max_delay_ps"] = max_delay
    write_manifest(manifest_path(g2_path), "correlate", config, [args.stream], outputs, None, _elapsed(args, t0))
    if hist.g2_of_zero is not None:
        print(f"{meta['source']}: g2(0) = {hist.g2_of_zero:.4f} +- {hist.g2_uncertainty:.4f}")
    else:
        print(f"{meta['source']}: no sync tags, histogram left unnormalized")


# ---------------------------------------------------------------- analyze

def _group_histograms(paths):
    groups = OrderedDict()
    for p in paths:
        h = read_histogram_csv(p)
        source = h.metadata.get("source") or Path(p).name.split(".")[0]
        g = groups.setdefault(source, {"lifetime": None, "g2": None, "n": None, "inputs": []})
        kind = "lifetime" if isinstance(h, LifetimeHistogram) else "g2"
        if g[kind] is not None:
            raise ValidationError(f"two {kind} histograms for source {source!r}")
        g[kind] = h
        g["inputs"].append(p)
        n = h.metadata.get("n_emitters")
        if n not in (None, ""):
            g["n"] = int(n)
    return groups


def _report_value(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return "" if v is None else str(v)


def cmd_analyze(args):
    t0 = time.perf_counter()
    groups = _group_histograms(args.histograms)
    irf = args.irf_ps or None
    results = []
    for source, g in groups.items():
        results.append(
            analyze_run(source, g["lifetime"], g["g2"], g["n"], irf, args.model, args.tau_ref_ns)
        )
    ref = args.amplitude_ref
    if ref is None:
        singles = [r.amplitude for r in results if r.n_emitters == 1 and not math.isnan(r.amplitude)]
        ref = singles[0] if len(singles) == 1 else None
    if ref:
        results = [with_reference(r, ref) for r in results]

    scaling = None
    pts = [(r.n_emitters, r.amplitude) for r in results if r.n_emitters and not math.isnan(r.amplitude)]
    if len({n for n, _ in pts}) >= 3:
        scaling = intensity_scaling(pts)

    prefix = Path(args.output_prefix)
    txt, csv_path = Path(f"{prefix}.report.txt"), Path(f"{prefix}.report.csv")
    fields = []
    for r in results:
        for k in r.as_fields():
            if k not in fields:
                fields.append(k)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in results:
            row = r.as_fields()
            w.writerow([_report_value(row.get(k)) for k in fields])

    lines = []
    for r in results:
        lines.append(f"[{r.source}]")
        for k, v in r.as_fields().items():
            if k != "source":
                lines.append(f"{k} = {_report_value(v)}")
        if r.fit is not None:
            lines.extend(f"note = {n}" for n in r.fit.notes)
        if r.report is not None:
            lines.extend(f"note = {n}" for n in r.report.notes)
        lines.append("")
    if scaling is not None:
        lines.append("[intensity_scaling]")
        lines.append(f"exponent = {scaling.exponent:.6g}")
        lines.append(f"uncertainty = {scaling.uncertainty:.6g}")
        lines.append("n_values = " + ",".join(f"{n:g}" for n in scaling.n_values))
        lines.append("")
    txt.write_text("\n".join(lines))

    config = {"model": args.model, "irf_ps": args.irf_ps, "tau_ref_ns": args.tau_ref_ns, "amplitude_ref": ref}
    write_manifest(manifest_path(txt), "analyze", config, args.histograms, [txt, csv_path], None, _elapsed(args, t0))
    for r in results:
        verdict = r.report.verdict.value if r.report else "n/a"
        tau = f"{r.fit.lifetime_ns:.4f} ns" if r.fit else "n/a"
        print(f"{r.source}: lifetime {tau}, verdict {verdict}")
    if scaling is not None:
        print(f"intensity scaling exponent {scaling.exponent:.3f} +- {scaling.uncertainty:.3f}")


# ---------------------------------------------------------------- plmap

def cmd_plmap(args):
    t0 = time.perf_counter()
    brightness = args.brightness or [1.0] * len(args.geometry)
    if len(brightness) != len(args.geometry):
        raise ValidationError("give one --brightness per --geometry")
    sites = [(read_geometry(p), b) for p, b in zip(args.geometry, brightness)]
    grid = Grid.centred((args.center_x_nm, args.center_y_nm), args.pixel_nm, args.size)
    raster = render_pl_map(sites, args.psf_nm, grid)
    out = Path(args.output)
    write_raster_csv(raster, out, grid)
    outputs = [out]
    spots = detect_spots(raster, ThresholdPolicy(args.k, args.psf_nm / args.pixel_nm))
    if args.spots:
        with open(args.spots, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x_nm", "y_nm", "brightness", "fwhm_nm"))
            for s in spots:
                w.writerow((
                    repr(grid.x0_nm + s.col * grid.pixel_nm), repr(grid.y0_nm + s.row * grid.pixel_nm),
                    repr(s.brightness), repr(s.fwhm_px * grid.pixel_nm),
                ))
        outputs.append(Path(args.spots))
    config = {k: getattr(args, k) for k in ("brightness", "psf_nm", "pixel_nm", "size", "center_x_nm", "center_y_nm", "k")}
    config["brightness"] = brightness
    write_manifest(manifest_path(out), "plmap", config, args.geometry, outputs, None, _elapsed(args, t0))
    print(f"{out}: {grid.ny}x{grid.nx} raster, {len(spots)} spots above threshold")


# ---------------------------------------------------------------- reproduce

def cmd_reproduce(args):
    from .reproduce import run_suite

    t0 = time.perf_counter()
    log = (lambda m: print(m, file=sys.stderr)) if args.verbose else None
    run_suite(args.output, args.seed, args.pulses, args.irf_ps, args.window_ps, log)
    if args.record_timing:
        (Path(args.output) / "timing.json").write_text(
            json.dumps({"duration_s": round(time.perf_counter() - t0, 3)}) + "\n"
        )
    print((Path(args.output) / "summary.txt").read_text(), end="")


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="superrad", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--record-timing", action="store_true",
                        help="store wall-clock duration in the manifest (breaks byte-identical reruns)")

    s = sub.add_parser("simulate", help="simulate emission and detection, write a time-tag stream")
    s.add_argument("--config", help="key = value run configuration file")
    s.add_argument("--geometry", help="emitter geometry file")
    s.add_argument("--engine", choices=("dicke", "trajectory"))
    s.add_argument("--n", type=int)
    s.add_argument("--tau-ns", type=float)
    s.add_argument("--regime", choices=("dicke", "independent"))
    s.add_argument("--replicas", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--pulses", type=_count)
    s.add_argument("--rep-rate-mhz", type=float)
    s.add_argument("--excitation-probability", type=float)
    s.add_argument("--irf-ps", type=float)
    s.add_argument("--efficiency", type=float)
    s.add_argument("--splitter", type=float)
    s.add_argument("--dead-time-ns", type=float)
    s.add_argument("--dark-hz", type=float)
    s.add_argument("--detector-seed", type=int, help="detector noise seed (default: --seed)")
    s.add_argument("--detector-delay-ps", type=int)
    s.add_argument("--include-coupling", action="store_true", help="add the dipole-dipole shift (trajectory engine)")
    s.add_argument("-o", "--output", required=True, help="output .ttg path")
    common(s)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("correlate", help="g2 and lifetime histograms from a stream")
    c.add_argument("stream")
    c.add_argument("-o", "--output-prefix", help="default: stream path without suffix")
    c.add_argument("--bin-ps", type=int, default=100)
    c.add_argument("--max-delay-ps", type=int, help="default: enough to cover the side peaks")
    c.add_argument("--side-peaks", type=int, default=10, help="side peaks used on each side of zero")
    c.add_argument("--window-ps", type=int, default=DEFAULT_G2_WINDOW_PS,
                   help="peak integration window; 0 integrates full periods")
    c.add_argument("--period-ps", type=int, help="repetition period (default: from sync tags)")
    c.add_argument("--lifetime", action="store_true", help="also write the sync-referenced lifetime histogram")
    common(c)
    c.set_defaults(func=cmd_correlate)

    a = sub.add_parser("analyze", help="fit lifetimes, infer emitter numbers, report")
    a.add_argument("histograms", nargs="+")
    a.add_argument("-o", "--output-prefix", default="analysis")
    a.add_argument("--model", choices=("auto", "mono", "bi"), default="auto")
    a.add_argument("--irf-ps", type=float, default=500.0, help="IRF FWHM; 0 fits the tail only")
    a.add_argument("--tau-ref-ns", type=float, default=1.85, help="single-emitter lifetime")
    a.add_argument("--amplitude-ref", type=float,
                   help="single-emitter peak amplitude (default: the N=1 source, if exactly one)")
    common(a)
    a.set_defaults(func=cmd_analyze)

    m = sub.add_parser("plmap", help="render a diffraction-limited PL map and detect spots")
    m.add_argument("--geometry", action="append", required=True)
    m.add_argument("--brightness", type=float, action="append")
    m.add_argument("--psf-nm", type=float, default=250.0)
    m.add_argument("--pixel-nm", type=float, default=20.0)
    m.add_argument("--size", type=int, default=101, help="pixels per side")
    m.add_argument("--center-x-nm", type=float, default=0.0)
    m.add_argument("--center-y-nm", type=float, default=0.0)
    m.add_argument("--k", type=float, default=5.0, help="threshold in robust sigmas above the median")
    m.add_argument("--spots", help="write detected spots to this CSV")
    m.add_argument("-o", "--output", required=True)
    common(m)
    m.set_defaults(func=cmd_plmap)

    r = sub.add_parser("reproduce", help="run the full reproduction suite")
    r.add_argument("-o", "--output", required=True, help="output directory")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--pulses", type=_count, default=1_000_000)
    r.add_argument("--irf-ps", type=float, default=500.0)
    r.add_argument("--window-ps", type=int, default=DEFAULT_G2_WINDOW_PS)
    r.add_argument("-v", "--verbose", action="store_true")
    common(r)
    r.set_defaults(func=cmd_reproduce)
    return p


def _exit_code(exc):
    if isinstance(exc, FitError):
        return EXIT_NUMERICAL
    if isinstance(exc, (TimeTagFormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, (ValidationError, ValueError)):
        return EXIT_VALIDATION
    if isinstance(exc, (ArithmeticError, SuperradError)):
        return EXIT_NUMERICAL
    return None


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        msg = json.dumps(str(exc))
        print(f"error: kind={type(exc).__name__} code={code} message={msg}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
