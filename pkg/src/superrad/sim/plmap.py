"""Diffraction-limited photoluminescence maps of emitter sites."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..emitters import EmitterEnsemble
from ..errors import ValidationError


@dataclass(frozen=True)
class Grid:
    """Pixel grid in the sample plane; pixel (row, col) is centred at
    ``(x0 + col * pixel_nm, y0 + row * pixel_nm)``."""

    x0_nm: float
    y0_nm: float
    pixel_nm: float
    nx: int
    ny: int

    def __post_init__(self):
        if self.pixel_nm <= 0 or self.nx < 1 or self.ny < 1:
            raise ValidationError("grid needs a positive pixel size and at least one pixel")

    @classmethod
    def centred(cls, center_xy, pixel_nm, nx, ny=None):
        ny = nx if ny is None else ny
        return cls(
            center_xy[0] - pixel_nm * (nx - 1) / 2,
            center_xy[1] - pixel_nm * (ny - 1) / 2,
            pixel_nm,
            nx,
            ny,
        )

    @property
    def x(self):
        return self.x0_nm + self.pixel_nm * np.arange(self.nx)

    @property
    def y(self):
        return self.y0_nm + self.pixel_nm * np.arange(self.ny)

    def contains(self, x, y):
        half = self.pixel_nm / 2
        return (
            self.x0_nm - half <= x <= self.x[-1] + half
            and self.y0_nm - half <= y <= self.y[-1] + half
        )

    def to_pixel(self, x, y):
        """Fractional (row, col) of a sample-plane point."""
        return (y - self.y0_nm) / self.pixel_nm, (x - self.x0_nm) / self.pixel_nm


def render_pl_map(sites, psf_fwhm_nm: float, grid: Grid) -> np.ndarray:
    """Sum of isotropic Gaussian spots, one per emitter, shape ``(ny, nx)``.

    ``sites`` is a list of ``(EmitterEnsemble, brightness)``; every emitter of
    an ensemble contributes a spot of peak height ``brightness`` (its mean
    photon yield) at its in-plane position.
    """
    if not sites:
        raise ValidationError("need at least one emitter site to render")
    if not psf_fwhm_nm > 0:
        raise ValidationError("psf_fwhm_nm must be positive")
    sigma = psf_fwhm_nm / (2 * math.sqrt(2 * math.log(2)))
    xs, ys = grid.x, grid.y
    raster = np.zeros((grid.ny, grid.nx))
    for ensemble, weight in sites:
        if not isinstance(ensemble, EmitterEnsemble):
            raise ValidationError("sites must be (EmitterEnsemble, brightness) pairs")
        for px, py, _ in ensemble.positions:
            if not grid.contains(px, py):
                raise ValidationError(f"emitter at ({px:g}, {py:g}) nm lies outside the grid")
            gx = np.exp(-((xs - px) ** 2) / (2 * sigma**2))
            gy = np.exp(-((ys - py) ** 2) / (2 * sigma**2))
            raster += weight * np.outer(gy, gx)
    return raster


def write_raster_csv(raster, path, grid: Grid | None = None):
    """Plain CSV grid, one row per line; grid geometry in ``#`` header lines."""
    lines = []
    if grid is not None:
        lines += [
            f"# x0_nm={grid.x0_nm!r}",
            f"# y0_nm={grid.y0_nm!r}",
            f"# pixel_nm={grid.pixel_nm!r}",
        ]
    lines += [",".join(repr(float(v)) for v in row) for row in np.asarray(raster)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_raster_csv(path):
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return np.array([[float(v) for v in ln.split(",")] for ln in rows])
