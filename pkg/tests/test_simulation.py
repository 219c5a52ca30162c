import dataclasses

import numpy as np
import pytest
from scipy import integrate, stats

from oracles.emission import ladder_intensity, lindblad_intensity
from superrad._kernels import apply_dead_time
from superrad.emitters import DecayMatrix, EmitterEnsemble, build_decay_matrix, dicke_ladder
from superrad.errors import CapacityError, ValidationError
from superrad.sim.cascade import simulate_dicke_cascade
from superrad.sim.config import BLOCK_PULSES, DetectorChainConfig, PulseTrainConfig
from superrad.sim.detector import apply_detector_chain
from superrad.sim.events import EmissionEvents
from superrad.sim.trajectories import simulate_trajectories

G0 = 1 / 1.85
IDEAL = DetectorChainConfig(
    irf_fwhm_ps=0, detection_efficiency=1.0, dead_time_ns=0, dark_count_rate_Hz=0, detector_delay_ps=0
)


def intensity_chi2(events, n_pulses, rate_fn, t_max_ns=8.0, nbins=40):
    """Pearson p-value of the photon arrival histogram against an emission-rate curve."""
    edges = np.linspace(0, t_max_ns, nbins + 1)
    grid = np.linspace(0, t_max_ns, 801)
    rate = rate_fn(grid)
    cum = integrate.cumulative_trapezoid(rate, grid, initial=0.0)
    expected = n_pulses * np.diff(np.interp(edges, grid, cum))
    observed, _ = np.histogram(events.time_since_pulse_ps / 1000.0, edges)
    chi2 = float(((observed - expected) ** 2 / expected).sum())
    return stats.chi2.sf(chi2, nbins)


# ---------------------------------------------------------------- cascade

@pytest.mark.parametrize("n", [1, 2, 3])
def test_cascade_matches_population_equations(n):
    pulses = PulseTrainConfig(n_pulses=40_000)
    lad = dicke_ladder(n, G0)
    ev = simulate_dicke_cascade(lad, pulses, seed=11)
    assert intensity_chi2(ev, pulses.n_pulses, lambda t: ladder_intensity(lad.rates, t)) > 1e-3


def test_cascade_conserves_photons():
    pulses = PulseTrainConfig(n_pulses=5000)
    ev = simulate_dicke_cascade(dicke_ladder(3, G0), pulses, seed=1, replicas=4)
    assert len(ev) + ev.late == 5000 * 12
    assert set(np.unique(ev.emitter_branch)) == set(range(12))


def test_cascade_partial_excitation_inverts_whole_ladders():
    pulses = PulseTrainConfig(n_pulses=20_000, excitation_probability=0.3)
    ev = simulate_dicke_cascade(dicke_ladder(2, G0), pulses, seed=2)
    per_pulse = ev.photons_per_pulse()
    assert set(np.unique(per_pulse)) <= {0, 2}
    assert np.mean(per_pulse == 2) == pytest.approx(0.3, abs=0.01)


def test_cascade_events_are_ordered_and_in_period():
    ev = simulate_dicke_cascade(dicke_ladder(2, G0), PulseTrainConfig(n_pulses=3000), seed=5)
    key = ev.pulse_index * ev.period_ps + ev.time_since_pulse_ps
    assert np.all(np.diff(key) >= 0)
    assert ev.time_since_pulse_ps.min() >= 0 and ev.time_since_pulse_ps.max() < ev.period_ps


def test_cascade_deterministic_and_slice_invariant():
    pulses = PulseTrainConfig(n_pulses=3 * BLOCK_PULSES + 100)
    lad = dicke_ladder(2, G0)
    full = simulate_dicke_cascade(lad, pulses, seed=9)
    assert full == simulate_dicke_cascade(lad, pulses, seed=9)
    assert full != simulate_dicke_cascade(lad, pulses, seed=10)
    parts = [
        simulate_dicke_cascade(lad, pulses, seed=9, pulse_slice=(0, BLOCK_PULSES)),
        simulate_dicke_cascade(lad, pulses, seed=9, pulse_slice=(BLOCK_PULSES, pulses.n_pulses)),
    ]
    assert EmissionEvents.concatenate(parts) == full


def test_long_lifetime_warns_and_drops_late_photons():
    pulses = PulseTrainConfig(n_pulses=2000)
    ev = simulate_dicke_cascade(dicke_ladder(1, 1 / 10.0), pulses, seed=0)
    assert ev.warnings
    # P(t > 25 ns) = exp(-2.5)
    assert ev.late / 2000 == pytest.approx(np.exp(-2.5), abs=0.03)


def test_event_access():
    ev = simulate_dicke_cascade(dicke_ladder(2, G0), PulseTrainConfig(n_pulses=10), seed=0)
    first = ev[0]
    assert first.pulse_index == 0 and first == next(iter(ev))
    assert len(list(ev)) == len(ev)


# ---------------------------------------------------------------- trajectories

def pair_matrix(kr, coupling=False):
    r = kr * 436.0 / (2 * np.pi)
    ens = EmitterEnsemble.from_positions([[0, 0, 0], [0, r, 0]], 436.0, G0)
    return build_decay_matrix(ens, include_coupling=coupling)


@pytest.mark.parametrize(
    "matrix",
    [
        DecayMatrix.dicke_limit(2, G0),
        DecayMatrix.independent(2, G0),
        pair_matrix(1.2),
        DecayMatrix.dicke_limit(3, G0),
    ],
    ids=["dicke2", "independent2", "pair", "dicke3"],
)
def test_trajectories_match_master_equation(matrix):
    pulses = PulseTrainConfig(n_pulses=20_000)
    ev = simulate_trajectories(matrix, pulses, seed=4)
    p = intensity_chi2(ev, pulses.n_pulses, lambda t: lindblad_intensity(matrix.gamma, t))
    assert p > 1e-3


def test_trajectories_with_coherent_coupling_match_master_equation():
    matrix = pair_matrix(1.0, coupling=True)
    pulses = PulseTrainConfig(n_pulses=6000)
    ev = simulate_trajectories(matrix, pulses, seed=8)
    rate = lambda t: lindblad_intensity(matrix.gamma, t, matrix.coupling)  # noqa: E731
    assert intensity_chi2(ev, pulses.n_pulses, rate, nbins=25) > 1e-3


def test_dark_state_trapping():
    # one excited emitter in the Dicke limit is half bright, half dark
    pulses = PulseTrainConfig(n_pulses=40_000, excitation_probability=0.5)
    ev = simulate_trajectories(DecayMatrix.dicke_limit(2, G0), pulses, seed=3)
    # both excited (1/4): two photons; exactly one excited (1/2): one photon half the time
    assert len(ev) / pulses.n_pulses == pytest.approx(0.75, abs=0.015)


def test_full_rank_matrix_emits_every_photon():
    pulses = PulseTrainConfig(n_pulses=4000)
    ev = simulate_trajectories(pair_matrix(0.8), pulses, seed=1)
    assert len(ev) + ev.late == 2 * pulses.n_pulses


def test_trajectory_capacity_cap():
    with pytest.raises(CapacityError):
        simulate_trajectories(DecayMatrix.independent(13, G0), PulseTrainConfig(n_pulses=10), seed=0)


def test_trajectory_rejects_non_psd():
    bad = DecayMatrix(np.array([[G0, 2 * G0], [2 * G0, G0]]), G0)
    with pytest.raises(ValidationError):
        simulate_trajectories(bad, PulseTrainConfig(n_pulses=10), seed=0)


def test_trajectories_deterministic_and_slice_invariant():
    pulses = PulseTrainConfig(n_pulses=BLOCK_PULSES + 500)
    m = DecayMatrix.dicke_limit(2, G0)
    full = simulate_trajectories(m, pulses, seed=21)
    assert full == simulate_trajectories(m, pulses, seed=21)
    parts = [
        simulate_trajectories(m, pulses, seed=21, pulse_slice=(0, BLOCK_PULSES)),
        simulate_trajectories(m, pulses, seed=21, pulse_slice=(BLOCK_PULSES, pulses.n_pulses)),
    ]
    assert EmissionEvents.concatenate(parts) == full


# ---------------------------------------------------------------- detector chain

def events_for(n_pulses=20_000, n=2, seed=0):
    pulses = PulseTrainConfig(n_pulses=n_pulses)
    return simulate_dicke_cascade(dicke_ladder(n, G0), pulses, seed), pulses


def test_ideal_detector_is_identity():
    ev, pulses = events_for(2000)
    s = apply_detector_chain(ev, pulses, IDEAL)
    det = s.timestamp[s.channel != 0]
    assert np.array_equal(np.sort(det), np.sort(ev.absolute_times()))
    assert np.array_equal(s.times(0), np.arange(2000) * pulses.period_ps)
    s.validate()


def test_efficiency_and_splitter():
    ev, pulses = events_for()
    chain = dataclasses.replace(IDEAL, detection_efficiency=0.3, splitter_ratio=0.7)
    counts = apply_detector_chain(ev, pulses, chain).counts_per_channel()
    n = len(ev)
    assert counts[1] + counts[2] == pytest.approx(0.3 * n, rel=0.02)
    assert counts[1] / (counts[1] + counts[2]) == pytest.approx(0.7, abs=0.01)


def test_dark_counts():
    pulses = PulseTrainConfig(n_pulses=200_000)
    empty = EmissionEvents.collect([], pulses.period_ps, pulses.n_pulses)
    chain = dataclasses.replace(IDEAL, dark_count_rate_Hz=2e5)
    counts = apply_detector_chain(empty, pulses, chain).counts_per_channel()
    expected = 2e5 * pulses.n_pulses * pulses.period_ps * 1e-12
    for ch in (1, 2):
        assert counts[ch] == pytest.approx(expected, rel=0.1)


def test_jitter_width_and_delay():
    ev, pulses = events_for(20_000, n=1)
    chain = dataclasses.replace(IDEAL, irf_fwhm_ps=500, detector_delay_ps=3000)
    s = apply_detector_chain(ev, pulses, chain)
    t = np.sort(s.timestamp[s.channel != 0])
    shift = t - np.sort(ev.absolute_times())
    # sorting pairs tags only approximately; the mean shift is the cable delay
    assert np.mean(shift) == pytest.approx(3000, abs=10)


def dead_time_reference(times, dead):
    keep, last = [], None
    for t in times:
        ok = last is None or t - last >= dead
        keep.append(ok)
        if ok:
            last = t
    return np.array(keep, dtype=bool)


def test_dead_time_kernel_matches_python_twin():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = np.sort(rng.integers(0, 10**6, 500))
        dead = int(rng.integers(1, 20_000))
        assert np.array_equal(apply_dead_time(t, dead), dead_time_reference(t.tolist(), dead))


def test_dead_time_limits_one_tag_per_window():
    ev, pulses = events_for(5000, n=4)
    chain = dataclasses.replace(IDEAL, dead_time_ns=25.0)
    s = apply_detector_chain(ev, pulses, chain)
    for ch in (1, 2):
        assert np.diff(s.times(ch)).min() >= 25_000


def test_detector_deterministic():
    ev, pulses = events_for(3000)
    chain = dataclasses.replace(IDEAL, irf_fwhm_ps=500, detection_efficiency=0.5, rng_seed=4)
    assert apply_detector_chain(ev, pulses, chain) == apply_detector_chain(ev, pulses, chain)
