"""Run configuration: pulse train, detector chain, and ``key = value`` files."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ValidationError

# pulses per RNG substream; work may be split across workers only at these boundaries
BLOCK_PULSES = 8192


@dataclass(frozen=True)
class PulseTrainConfig:
    repetition_rate_MHz: float = 40.0
    n_pulses: int = 100_000
    excitation_probability: float = 1.0

    def __post_init__(self):
        if not self.repetition_rate_MHz > 0:
            raise ValidationError("repetition_rate_MHz must be positive")
        if int(self.n_pulses) != self.n_pulses or self.n_pulses < 1:
            raise ValidationError("n_pulses must be a positive integer")
        object.__setattr__(self, "n_pulses", int(self.n_pulses))
        if not 0.0 <= self.excitation_probability <= 1.0:
            raise ValidationError("excitation_probability must lie in [0, 1]")

    @property
    def period_ps(self) -> int:
        return int(round(1e6 / self.repetition_rate_MHz))

    def check_lifetime(self, longest_lifetime_ns) -> list[str]:
        """Warnings if the period is too short to let the emitters relax."""
        if self.period_ps < 5 * longest_lifetime_ns * 1000:
            return [
                f"repetition period {self.period_ps} ps is shorter than 5x the "
                f"{longest_lifetime_ns:g} ns lifetime; emission will spill into later pulses"
            ]
        return []


@dataclass(frozen=True)
class DetectorChainConfig:
    """Beam splitter, two SPADs, and time tagger.

    ``detector_delay_ps`` is a common cable delay on both detector channels so
    that IRF jitter does not push tags ahead of their own sync.
    """

    irf_fwhm_ps: float = 500.0
    detection_efficiency: float = 1.0
    splitter_ratio: float = 0.5
    dead_time_ns: float = 25.0
    dark_count_rate_Hz: float = 0.0
    rng_seed: int = 0
    detector_delay_ps: int = 3000

    def __post_init__(self):
        if not self.irf_fwhm_ps >= 0:
            raise ValidationError("irf_fwhm_ps must be nonnegative")
        if not 0.0 < self.detection_efficiency <= 1.0:
            raise ValidationError("detection_efficiency must lie in (0, 1]")
        if not 0.0 < self.splitter_ratio < 1.0:
            raise ValidationError("splitter_ratio must lie in (0, 1)")
        if not self.dead_time_ns >= 0:
            raise ValidationError("dead_time_ns must be nonnegative")
        if not self.dark_count_rate_Hz >= 0:
            raise ValidationError("dark_count_rate_Hz must be nonnegative")
        if not 0 <= int(self.rng_seed) < 2**64:
            raise ValidationError("rng_seed must be a 64-bit unsigned integer")

    @property
    def irf_sigma_ps(self) -> float:
        return self.irf_fwhm_ps / (2 * math.sqrt(2 * math.log(2)))


def block_rng(seed, block, stream):
    """Generator for one block of pulses; ``stream`` separates independent uses."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), int(block)))
    return np.random.Generator(np.random.PCG64(ss))


def block_ranges(n_pulses, pulse_slice=None):
    """Yield ``(block, start, stop)`` covering ``pulse_slice`` (default: all pulses)."""
    start, stop = pulse_slice if pulse_slice is not None else (0, n_pulses)
    if start % BLOCK_PULSES or (stop % BLOCK_PULSES and stop != n_pulses):
        raise ValidationError(f"pulse slices must align to {BLOCK_PULSES}-pulse blocks")
    if not 0 <= start <= stop <= n_pulses:
        raise ValidationError("pulse slice out of range")
    for lo in range(start, stop, BLOCK_PULSES):
        yield lo // BLOCK_PULSES, lo, min(lo + BLOCK_PULSES, stop)


# Batch runs sit in the low count-rate limit: a 25 ns dead time at a 25 ns
# period drops next-pulse photons that arrive early and lengthens fitted lifetimes.
RUN_DETECTOR = DetectorChainConfig(detection_efficiency=0.5, dead_time_ns=0.0, dark_count_rate_Hz=100.0)


@dataclass
class RunConfig:
    """Everything a simulate run needs besides the geometry file."""

    engine: str = "dicke"
    n: int = 1
    tau_ns: float = 1.85
    regime: str = "dicke"
    replicas: int = 1
    seed: int = 0
    include_coupling: bool = False
    pulses: PulseTrainConfig = field(default_factory=PulseTrainConfig)
    detector: DetectorChainConfig = field(default_factory=lambda: RUN_DETECTOR)

    def as_dict(self):
        return dataclasses.asdict(self)


def _coerce(text, typ):
    text = text.strip()
    if typ in (bool, "bool"):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if typ in (int, "int"):
        val = float(text)
        if val != int(val):
            raise ValueError(f"not an integer: {text!r}")
        return int(val)
    if typ in (float, "float"):
        return float(text)
    return text


def parse_key_values(text, origin="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"{origin}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


def build_run_config(values: dict, base: RunConfig | None = None) -> RunConfig:
    """Overlay string ``values`` onto ``base``; keys may name any nested field."""
    base = base or RunConfig()
    top, pulse_kw, det_kw = {}, {}, {}
    top_fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    pulse_fields = {f.name: f.type for f in dataclasses.fields(PulseTrainConfig)}
    det_fields = {f.name: f.type for f in dataclasses.fields(DetectorChainConfig)}
    for key, value in values.items():
        if value is None:
            continue
        try:
            if key in pulse_fields:
                pulse_kw[key] = value if not isinstance(value, str) else _coerce(value, pulse_fields[key])
            elif key in det_fields:
                det_kw[key] = value if not isinstance(value, str) else _coerce(value, det_fields[key])
            elif key in top_fields and key not in ("pulses", "detector"):
                top[key] = value if not isinstance(value, str) else _coerce(value, top_fields[key])
            else:
                raise ValidationError(f"unknown configuration key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{key}: {exc}") from exc
    pulses = dataclasses.replace(base.pulses, **pulse_kw)
    detector = dataclasses.replace(base.detector, **det_kw)
    cfg = dataclasses.replace(base, pulses=pulses, detector=detector, **top)
    if cfg.engine not in ("dicke", "trajectory"):
        raise ValidationError(f"engine must be 'dicke' or 'trajectory', got {cfg.engine!r}")
    if cfg.regime not in ("dicke", "independent"):
        raise ValidationError(f"regime must be 'dicke' or 'independent', got {cfg.regime!r}")
    if cfg.n < 1 or cfg.replicas < 1:
        raise ValidationError("n and replicas must be positive")
    if not cfg.tau_ns > 0:
        raise ValidationError("tau_ns must be positive")
    return cfg


def read_run_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    return build_run_config(parse_key_values(path.read_text(), str(path)), base)


def format_run_config(cfg: RunConfig) -> str:
    lines = []
    for key, value in cfg.as_dict().items():
        if isinstance(value, dict):
            lines.extend(f"{k} = {v!r}" for k, v in value.items())
        else:
            lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
