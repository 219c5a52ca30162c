"""Emitter ensembles and their collective decay matrices.

Distances are in nanometres, rates in 1/ns. The cross-damping kernel is the
free-space dipole-dipole result; at zero separation it reduces to
``gamma0 * (d_i . d_j)``, the Dicke limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import DegenerateGeometryError, ValidationError

DEFAULT_DIPOLE = (1.0, 0.0, 0.0)
UNIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class EmitterEnsemble:
    """N identical two-level emitters.

    Attributes
    ----------
    positions : (N, 3) array, nm
    dipoles : (N, 3) array of unit vectors
    wavelength_nm : transition wavelength
    gamma0_per_ns : single-emitter radiative rate
    """

    positions: np.ndarray
    dipoles: np.ndarray
    wavelength_nm: float
    gamma0_per_ns: float

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float, ndmin=2)
        dip = np.array(self.dipoles, dtype=float, ndmin=2)
        if pos.shape[-1] != 3 or dip.shape[-1] != 3 or pos.ndim != 2 or dip.ndim != 2:
            raise ValidationError("positions and dipoles must be lists of 3-vectors")
        if len(pos) == 0 or len(pos) != len(dip):
            raise ValidationError(
                f"need N >= 1 positions with matching dipoles, got {len(pos)} and {len(dip)}"
            )
        norms = np.linalg.norm(dip, axis=1)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_TOL)
        if bad.size:
            raise ValidationError(
                f"dipole {bad[0]} has norm {norms[bad[0]]:.12g}, expected unit vector"
            )
        if not (self.wavelength_nm > 0 and self.gamma0_per_ns > 0):
            raise ValidationError("wavelength_nm and gamma0_per_ns must be positive")
        pos.setflags(write=False)
        dip.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "dipoles", dip)
        object.__setattr__(self, "wavelength_nm", float(self.wavelength_nm))
        object.__setattr__(self, "gamma0_per_ns", float(self.gamma0_per_ns))

    @classmethod
    def from_positions(cls, positions, wavelength_nm, gamma0_per_ns, dipoles=None):
        """Build an ensemble; dipoles default to all parallel along x."""
        pos = np.array(positions, dtype=float, ndmin=2)
        if dipoles is None:
            dipoles = np.tile(DEFAULT_DIPOLE, (len(pos), 1))
        return cls(pos, dipoles, wavelength_nm, gamma0_per_ns)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def wavenumber(self) -> float:
        """k = 2 pi / lambda in 1/nm."""
        return 2 * math.pi / self.wavelength_nm

    def __eq__(self, other):
        if not isinstance(other, EmitterEnsemble):
            return NotImplemented
        return (
            np.array_equal(self.positions, other.positions)
            and np.array_equal(self.dipoles, other.dipoles)
            and self.wavelength_nm == other.wavelength_nm
            and self.gamma0_per_ns == other.gamma0_per_ns
        )


@dataclass(frozen=True, eq=False)
class DecayMatrix:
    """Collective decay matrix ``gamma`` and optional coherent ``coupling`` (1/ns)."""

    gamma: np.ndarray
    gamma0: float
    coupling: np.ndarray | None = None

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float, ndmin=2)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValidationError("decay matrix must be square")
        if not np.allclose(g, g.T, rtol=0, atol=1e-12 * self.gamma0):
            raise ValidationError("decay matrix must be symmetric")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        if self.coupling is not None:
            j = np.array(self.coupling, dtype=float, ndmin=2)
            if j.shape != g.shape or not np.allclose(j, j.T):
                raise ValidationError("coupling matrix must be symmetric and match gamma")
            if np.any(np.diag(j) != 0):
                raise ValidationError("coupling matrix must have zero diagonal")
            j.setflags(write=False)
            object.__setattr__(self, "coupling", j)

    @property
    def n(self) -> int:
        return self.gamma.shape[0]

    def eigen(self):
        """Eigenvalues (ascending) and eigenvectors of ``gamma``."""
        return np.linalg.eigh(self.gamma)

    def check_psd(self):
        w = np.linalg.eigvalsh(self.gamma)
        if w[0] < -1e-9 * self.gamma0:
            raise ValidationError(
                f"decay matrix is not positive semi-definite (min eigenvalue {w[0]:.3g})"
            )

    @classmethod
    def dicke_limit(cls, n, gamma0):
        """All emitters coincident with parallel dipoles: every entry equals gamma0."""
        return cls(np.full((n, n), float(gamma0)), float(gamma0))

    @classmethod
    def independent(cls, n, gamma0):
        """Fully decoupled emitters."""
        return cls(np.eye(n) * float(gamma0), float(gamma0))


def _radial_terms(x):
    """Return (sin x/x, cos x/x^2 - sin x/x^3, cos x/x, sin x/x^2 + cos x/x^3).

    The last two diverge at x -> 0; callers must not ask for them there.
    """
    x = np.asarray(x, dtype=float)
    small = x < 1e-3
    xs = np.where(small, 1.0, x)
    s, c = np.sin(xs), np.cos(xs)
    sinc = np.where(small, 1 - x**2 / 6, s / xs)
    near = np.where(small, -1.0 / 3 + x**2 / 30, c / xs**2 - s / xs**3)
    with np.errstate(divide="ignore", invalid="ignore"):
        far_cos = c / xs
        mid = s / xs**2 + c / xs**3
    return sinc, near, far_cos, mid


def build_decay_matrix(
    ensemble: EmitterEnsemble, include_coupling: bool = False, dicke_limit: bool = False
) -> DecayMatrix:
    """Cross-damping (and optionally dipole-dipole shift) matrix for an ensemble.

    For a pair at separation r with unit dipoles d_i, d_j and r_hat = r/|r|::

        Gamma_ij = 3 g0/2 [ (d_i.d_j - (d_i.r)(d_j.r)) sin(kr)/kr
                          + (d_i.d_j - 3(d_i.r)(d_j.r)) (cos(kr)/(kr)^2 - sin(kr)/(kr)^3) ]
        J_ij     = 3 g0/4 [ -(d_i.d_j - (d_i.r)(d_j.r)) cos(kr)/kr
                          + (d_i.d_j - 3(d_i.r)(d_j.r)) (sin(kr)/(kr)^2 + cos(kr)/(kr)^3) ]

    Coincident emitters are rejected unless ``dicke_limit`` is set, and the
    coupling term is never available for them since J diverges at r = 0.
    """
    g0 = ensemble.gamma0_per_ns
    n = ensemble.n
    pos, dip = ensemble.positions, ensemble.dipoles

    sep = pos[None, :, :] - pos[:, None, :]
    r = np.linalg.norm(sep, axis=-1)
    iu = np.triu_indices(n, k=1)
    coincident = r[iu] <= 1e-12 * ensemble.wavelength_nm
    if coincident.any():
        if not dicke_limit:
            i, j = iu[0][coincident][0], iu[1][coincident][0]
            raise DegenerateGeometryError(
                f"emitters {i} and {j} coincide; pass dicke_limit=True to allow"
            )
        if include_coupling:
            raise DegenerateGeometryError("coherent coupling diverges for coincident emitters")

    with np.errstate(invalid="ignore", divide="ignore"):
        rhat = np.where(r[..., None] > 0, sep / np.where(r > 0, r, 1.0)[..., None], 0.0)
    dd = dip @ dip.T
    di_r = np.einsum("ik,ijk->ij", dip, rhat)
    dj_r = np.einsum("jk,ijk->ij", dip, rhat)
    transverse = dd - di_r * dj_r
    longitudinal = dd - 3 * di_r * dj_r

    x = ensemble.wavenumber * r
    sinc, near, far_cos, mid = _radial_terms(x)
    gamma = 1.5 * g0 * (transverse * sinc + longitudinal * near)
    np.fill_diagonal(gamma, g0)
    gamma = 0.5 * (gamma + gamma.T)

    coupling = None
    if include_coupling:
        coupling = 0.75 * g0 * (-transverse * far_cos + longitudinal * mid)
        np.fill_diagonal(coupling, 0.0)
        coupling = 0.5 * (coupling + coupling.T)

    out = DecayMatrix(gamma, g0, coupling)
    out.check_psd()
    return out


@dataclass(frozen=True)
class DickeLadder:
    """Emission rates down the symmetric Dicke ladder, top rung first."""

    n_emitters: int
    gamma0: float
    rates: tuple

    def __post_init__(self):
        if len(self.rates) != self.n_emitters or min(self.rates) <= 0:
            raise ValidationError("ladder needs n_emitters positive rates")


def dicke_ladder(n: int, gamma0: float) -> DickeLadder:
    """Rates ``gamma0 (J+m)(J-m+1)`` for J = n/2 and m = J, J-1, ..., -J+1."""
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n!r}")
    if not gamma0 > 0:
        raise ValidationError("gamma0 must be positive")
    n = int(n)
    # (J+m)(J-m+1) with m = J - s reduces to (n-s)(s+1)
    rates = tuple(float(gamma0) * (n - s) * (s + 1) for s in range(n))
    return DickeLadder(n, float(gamma0), rates)


class RateEnhancement(NamedTuple):
    first_emission: float
    cascade: float


def effective_rate_enhancement(ladder: DickeLadder) -> RateEnhancement:
    """Speed-up of the ladder relative to a lone emitter.

    ``first_emission`` is the top-rung rate over gamma0 (N for a full ladder).
    ``cascade`` compares mean emission durations: (1/gamma0) / sum(1/rates).
    """
    first = ladder.rates[0] / ladder.gamma0
    cascade = (1.0 / ladder.gamma0) / math.fsum(1.0 / r for r in ladder.rates)
    return RateEnhancement(first, cascade)


def read_geometry(path) -> EmitterEnsemble:
    """Parse a geometry file.

    First line ``wavelength_nm=<v> gamma0_per_ns=<v>``, then ``x y z dx dy dz``
    per emitter. Blank lines and ``#`` comments are ignored.
    """
    lines = [
        ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()
    ]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValidationError(f"{path}: empty geometry file")
    header = {}
    for tok in lines[0].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ValidationError(f"{path}: malformed header token {tok!r}")
        header[key] = val
    try:
        wavelength = float(header["wavelength_nm"])
        gamma0 = float(header["gamma0_per_ns"])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{path}: header needs wavelength_nm and gamma0_per_ns") from exc
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 6:
            raise ValidationError(f"{path}: line {lineno}: expected 6 numbers")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ValidationError(f"{path}: line {lineno}: {exc}") from exc
    if not rows:
        raise ValidationError(f"{path}: no emitters")
    arr = np.array(rows)
    return EmitterEnsemble(arr[:, :3], arr[:, 3:], wavelength, gamma0)


def write_geometry(ensemble: EmitterEnsemble, path) -> None:
    out = [f"wavelength_nm={ensemble.wavelength_nm!r} gamma0_per_ns={ensemble.gamma0_per_ns!r}"]
    for p, d in zip(ensemble.positions, ensemble.dipoles):
        out.append(" ".join(repr(float(v)) for v in (*p, *d)))
    Path(path).write_text("\n".join(out) + "\n")
