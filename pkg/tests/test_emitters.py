import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from oracles.decay_kernel import gamma12
from superrad.emitters import (
    DecayMatrix,
    EmitterEnsemble,
    build_decay_matrix,
    dicke_ladder,
    effective_rate_enhancement,
    read_geometry,
    write_geometry,
)
from superrad.errors import DegenerateGeometryError, ValidationError

LAMBDA = 436.0
G0 = 1 / 1.85


def pair(kr, cos_angle=0.0):
    """Two x-polarised emitters whose separation makes the given angle with the dipole."""
    r = kr * LAMBDA / (2 * math.pi)
    sin_angle = math.sqrt(1 - cos_angle**2)
    pos = [[0, 0, 0], [r * cos_angle, r * sin_angle, 0]]
    return EmitterEnsemble.from_positions(pos, LAMBDA, G0)


@pytest.mark.parametrize(
    "kr, cos_angle",
    [(1.0, 0.0), (1.0, 1.0), (0.5, 0.0), (2.0, 0.6), (0.05, 0.3), (25.0, 0.0)],
)
def test_cross_damping_matches_bessel_form(kr, cos_angle):
    got = build_decay_matrix(pair(kr, cos_angle)).gamma[0, 1]
    assert got == pytest.approx(gamma12(kr, cos_angle, G0), rel=1e-9, abs=1e-12)


def test_cross_damping_reference_values():
    # numbers from the standalone Bessel oracle, printed once and frozen
    assert build_decay_matrix(pair(1.0)).gamma[0, 1] / G0 == pytest.approx(0.8104534588022092, rel=1e-10)
    assert build_decay_matrix(pair(1.0, 1.0)).gamma[0, 1] / G0 == pytest.approx(0.9035060368192712, rel=1e-10)


def test_close_pair_approaches_dicke_limit():
    g = build_decay_matrix(pair(1e-4)).gamma
    assert g[0, 1] == pytest.approx(G0, rel=1e-7)


def test_far_pair_is_nearly_independent():
    g = build_decay_matrix(pair(2 * math.pi * 50)).gamma
    assert abs(g[0, 1]) < 0.02 * G0


def test_diagonal_is_gamma0_and_symmetric():
    rng = np.random.default_rng(1)
    ens = EmitterEnsemble.from_positions(rng.uniform(-200, 200, (5, 3)), LAMBDA, G0)
    g = build_decay_matrix(ens).gamma
    assert np.allclose(np.diag(g), G0)
    assert np.array_equal(g, g.T)


def test_coincident_emitters_need_override():
    ens = EmitterEnsemble.from_positions([[0, 0, 0], [0, 0, 0]], LAMBDA, G0)
    with pytest.raises(DegenerateGeometryError):
        build_decay_matrix(ens)
    g = build_decay_matrix(ens, dicke_limit=True).gamma
    assert np.allclose(g, G0)
    with pytest.raises(DegenerateGeometryError):
        build_decay_matrix(ens, include_coupling=True, dicke_limit=True)


def test_coupling_is_symmetric_with_zero_diagonal():
    d = build_decay_matrix(pair(0.7, 0.2), include_coupling=True)
    assert d.coupling.shape == (2, 2)
    assert d.coupling[0, 0] == 0 and d.coupling[0, 1] == d.coupling[1, 0]
    # near field: the shift grows like 1/(kr)^3
    near = build_decay_matrix(pair(0.05), include_coupling=True).coupling[0, 1]
    assert abs(near) > 100 * G0


def test_non_unit_dipole_rejected():
    with pytest.raises(ValidationError):
        EmitterEnsemble([[0, 0, 0]], [[1.0, 0.1, 0]], LAMBDA, G0)


def test_mismatched_lengths_rejected():
    with pytest.raises(ValidationError):
        EmitterEnsemble([[0, 0, 0], [1, 0, 0]], [[1.0, 0, 0]], LAMBDA, G0)


def test_decay_matrix_validation():
    with pytest.raises(ValidationError):
        DecayMatrix([[1.0, 0.2], [0.3, 1.0]], 1.0)
    with pytest.raises(ValidationError):
        DecayMatrix([[1.0, 2.0], [2.0, 1.0]], 1.0).check_psd()


unit_vectors = hnp.arrays(float, 3, elements=st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 0.1
)


@given(
    positions=hnp.arrays(float, (4, 3), elements=st.floats(-300, 300)),
    dipoles=st.lists(unit_vectors, min_size=4, max_size=4),
)
def test_decay_matrix_is_positive_semidefinite(positions, dipoles):
    dip = np.array([d / np.linalg.norm(d) for d in dipoles])
    sep = np.linalg.norm(positions[:, None] - positions[None], axis=-1)
    if np.any(sep[np.triu_indices(4, 1)] < 1.0):
        return
    ens = EmitterEnsemble(positions, dip, LAMBDA, G0)
    w = np.linalg.eigvalsh(build_decay_matrix(ens).gamma)
    assert w.min() > -1e-9 * G0
    # the trace is conserved: total decay rate summed over eigenchannels is N gamma0
    assert w.sum() == pytest.approx(4 * G0)


@given(perm=st.permutations(range(4)))
def test_exchange_symmetry(perm):
    rng = np.random.default_rng(3)
    pos = rng.uniform(-150, 150, (4, 3))
    dip = rng.normal(size=(4, 3))
    dip /= np.linalg.norm(dip, axis=1, keepdims=True)
    g = build_decay_matrix(EmitterEnsemble(pos, dip, LAMBDA, G0)).gamma
    p = list(perm)
    gp = build_decay_matrix(EmitterEnsemble(pos[p], dip[p], LAMBDA, G0)).gamma
    assert np.allclose(gp, g[np.ix_(p, p)], atol=1e-14)


def test_dicke_ladder_rates():
    lad = dicke_ladder(4, 2.0)
    # (J+m)(J-m+1) with J = 2, m = 2, 1, 0, -1
    assert lad.rates == (8.0, 12.0, 12.0, 8.0)
    assert dicke_ladder(1, 0.5).rates == (0.5,)
    with pytest.raises(ValidationError):
        dicke_ladder(0, 1.0)


def test_rate_enhancement():
    assert effective_rate_enhancement(dicke_ladder(1, G0)) == (1.0, 1.0)
    firsts = [effective_rate_enhancement(dicke_ladder(n, G0)).first_emission for n in range(1, 8)]
    assert firsts == [float(n) for n in range(1, 8)]
    cascade = [effective_rate_enhancement(dicke_ladder(n, G0)).cascade for n in range(1, 8)]
    # N = 2 ladder takes 1/(2g) + 1/(2g): as long as a single emitter on average
    assert cascade[1] == pytest.approx(1.0)
    assert all(b > a for a, b in zip(cascade[1:], cascade[2:]))


def test_geometry_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    dip = rng.normal(size=(3, 3))
    dip /= np.linalg.norm(dip, axis=1, keepdims=True)
    ens = EmitterEnsemble(rng.uniform(-50, 50, (3, 3)), dip, LAMBDA, G0)
    path = tmp_path / "g.txt"
    write_geometry(ens, path)
    assert read_geometry(path) == ens


def test_geometry_parse_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("wavelength_nm=436\n0 0 0 1 0 0\n")
    with pytest.raises(ValidationError):
        read_geometry(bad)
    bad.write_text("wavelength_nm=436 gamma0_per_ns=0.5\n0 0 0 1 0\n")
    with pytest.raises(ValidationError, match="line 2"):
        read_geometry(bad)
    bad.write_text("# comment only\n")
    with pytest.raises(ValidationError):
        read_geometry(bad)
