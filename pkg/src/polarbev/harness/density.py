"""Grid cells per square meter as a function of distance from the ego vehicle."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import integrate

from polarbev.errors import ConfigError
from polarbev.polar_grid import CartGridSpec, GridSpec, PolarGridSpec

log = logging.getLogger(__name__)

DEFAULT_INTERVALS = ((1.0, 11.0), (11.0, 21.0), (21.0, 31.0), (31.0, 41.0), (41.0, 51.0), (51.0, 65.0))


@dataclass(frozen=True, eq=False)
class DensityProfile:
    kind: str
    intervals: tuple[tuple[float, float], ...]
    counts: np.ndarray
    areas: np.ndarray  # annulus area clipped to grid coverage, m^2
    densities: np.ndarray  # cells per m^2

    def rows(self):
        for (lo, hi), n, a, d in zip(self.intervals, self.counts, self.areas, self.densities):
            yield lo, hi, int(n), float(a), float(d)


def cell_center_radii(spec: GridSpec) -> np.ndarray:
    """Radius of every cell center, flattened in bin-id order."""
    if isinstance(spec, PolarGridSpec):
        radial = spec.r_min + (np.arange(spec.n_r) + 0.5) * spec.delta_r
        return np.tile(radial, spec.n_theta)
    xs = spec.x_min + (np.arange(spec.n_x) + 0.5) * spec.delta_x
    ys = spec.y_min + (np.arange(spec.n_y) + 0.5) * spec.delta_y
    return np.hypot(xs[:, None], ys[None, :]).ravel()


def disk_rect_area(radius: float, x0: float, x1: float, y0: float, y1: float) -> float:
    """Area of the disk of ``radius`` at the origin intersected with a rectangle."""
    if radius <= 0:
        return 0.0
    if x0 <= -radius and x1 >= radius and y0 <= -radius and y1 >= radius:
        return math.pi * radius * radius

    def chord(x):
        s = math.sqrt(max(radius * radius - x * x, 0.0))
        return max(0.0, min(y1, s) - max(y0, -s))

    a, b = max(x0, -radius), min(x1, radius)
    if b <= a:
        return 0.0
    kinks = [k for y in (y0, y1) if abs(y) < radius
             for k in (-math.sqrt(radius * radius - y * y), math.sqrt(radius * radius - y * y))
             if a < k < b]
    val, _ = integrate.quad(chord, a, b, points=kinks or None, epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def coverage_area(spec: GridSpec, lo: float, hi: float) -> float:
    """Area of the annulus [lo, hi) inside the region the grid covers."""
    if isinstance(spec, PolarGridSpec):
        a, b = max(lo, spec.r_min), min(hi, spec.r_max)
        return math.pi * (b * b - a * a) if b > a else 0.0
    rect = (spec.x_min, spec.x_max, spec.y_min, spec.y_max)
    return disk_rect_area(hi, *rect) - disk_rect_area(lo, *rect)


def grid_density(spec: GridSpec, intervals: Sequence = DEFAULT_INTERVALS) -> DensityProfile:
    intervals = tuple((float(lo), float(hi)) for lo, hi in intervals)
    for (lo, hi), nxt in zip(intervals, intervals[1:] + (None,)):
        if not 0 <= lo < hi:
            raise ConfigError(f"bad interval [{lo}, {hi})")
        if nxt is not None and nxt[0] != hi:
            raise ConfigError("intervals must be contiguous and increasing")
    radii = cell_center_radii(spec)
    counts, areas, dens = [], [], []
    for lo, hi in intervals:
        n = int(np.count_nonzero((radii >= lo) & (radii < hi)))
        area = coverage_area(spec, lo, hi)
        if area <= 0:
            log.warning("interval [%g, %g) does not intersect the grid coverage", lo, hi)
            d = 0.0
        else:
            d = n / area
        counts.append(n)
        areas.append(area)
        dens.append(d)
    kind = "polar" if isinstance(spec, PolarGridSpec) else "cart"
    return DensityProfile(kind, intervals, np.array(counts), np.array(areas), np.array(dens))


def matched_cart_spec(polar: PolarGridSpec) -> CartGridSpec:
    """Square Cartesian grid over [-r_max, r_max]^2 with (about) the same cell count."""
    n = int(round(math.sqrt(polar.n_bins)))
    return CartGridSpec(n, n, -polar.r_max, polar.r_max, -polar.r_max, polar.r_max)
