"""Equiangular lat/lon grids, coordinate normalization, and observation sampling.

Grid convention (also documented in the binary file header spec, see fileio):
latitude centers are cell-centered within the latitude extent, i.e. a global
H-row grid has centers at +/-(90 - dlat/2) and never touches the poles, so
cosine-latitude weights are strictly positive.  Longitude centers start at the
western edge of the extent with spacing span/W; a grid whose longitude span is
360 degrees is periodic and has no duplicated seam column.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

#: Uniform-spacing tolerance for coordinate arrays, in degrees.
SPACING_TOL = 1e-9

#: Fractional-index snap: bilinear reads closer than this to a grid point are
#: treated as exactly on it, so on-grid reads reproduce stored values bitwise.
INDEX_SNAP = 1e-9


class GridError(ValueError):
    """Invalid grid construction or out-of-domain coordinates."""


@dataclass(frozen=True)
class LatLonGrid:
    """Uniform latitude/longitude grid defined by start values and signed steps.

    ``lat_step`` is typically negative (north-to-south rows, the common
    reanalysis layout).  ``n_lat == 1`` grids are accepted; their step then
    encodes the full extent rather than a center-to-center spacing.
    """

    n_lat: int
    n_lon: int
    lat_start: float
    lat_step: float
    lon_start: float
    lon_step: float

    def __post_init__(self):
        if self.n_lat < 1 or self.n_lon < 1:
            raise GridError("grid sizes must be positive")
        lats = self.latitudes
        lons = self.longitudes
        if lats.min() < -90.0 - 1e-9 or lats.max() > 90.0 + 1e-9:
            raise GridError("latitude centers outside [-90, 90]")
        lo, hi = lons.min(), lons.max()
        in_0_360 = lo >= -1e-9 and hi < 360.0
        in_pm180 = lo >= -180.0 - 1e-9 and hi < 180.0
        if not (in_0_360 or in_pm180):
            raise GridError("longitude centers must lie in [0, 360) or [-180, 180)")

    @classmethod
    def from_arrays(cls, latitudes, longitudes) -> "LatLonGrid":
        """Build a grid from explicit center arrays, enforcing uniform spacing."""
        lats = np.asarray(latitudes, dtype=np.float64)
        lons = np.asarray(longitudes, dtype=np.float64)
        lat_step = _uniform_step(lats, "latitude")
        lon_step = _uniform_step(lons, "longitude")
        return cls(lats.size, lons.size, float(lats[0]), lat_step, float(lons[0]), lon_step)

    @cached_property
    def latitudes(self) -> np.ndarray:
        return self.lat_start + self.lat_step * np.arange(self.n_lat, dtype=np.float64)

    @cached_property
    def longitudes(self) -> np.ndarray:
        return self.lon_start + self.lon_step * np.arange(self.n_lon, dtype=np.float64)

    @property
    def lat_bounds(self) -> tuple[float, float]:
        """Latitude extent under the cell-centered convention."""
        a = self.lat_start - 0.5 * self.lat_step
        b = self.lat_start + (self.n_lat - 0.5) * self.lat_step
        return (min(a, b), max(a, b))

    @property
    def lon_bounds(self) -> tuple[float, float]:
        """Longitude extent; first center sits on the western edge."""
        span = abs(self.lon_step) * self.n_lon
        west = self.lon_start if self.lon_step >= 0 else self.lon_start - span + abs(self.lon_step)
        return (west, west + span)

    @property
    def lon_span(self) -> float:
        return abs(self.lon_step) * self.n_lon

    @property
    def periodic_lon(self) -> bool:
        return abs(self.lon_span - 360.0) <= 1e-6

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_lat, self.n_lon)


@dataclass(frozen=True)
class ChannelInfo:
    name: str
    group: int


@dataclass
class Field:
    """Multi-channel gridded values, float32, shaped (channels, H, W)."""

    grid: LatLonGrid
    values: np.ndarray
    channels: tuple[ChannelInfo, ...]

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.shape != (len(self.channels), self.grid.n_lat, self.grid.n_lon):
            raise GridError(
                f"field values shaped {self.values.shape}, expected "
                f"({len(self.channels)}, {self.grid.n_lat}, {self.grid.n_lon})"
            )
        if not np.isfinite(self.values).all():
            raise GridError("field values must be finite")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.channels)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.channels)


@dataclass
class ObservationSet:
    """Sparse (coordinate, value, mask) records at arbitrary resolution.

    Masked-out entries are forced to a 0.0 sentinel and must never be read.
    ``source_resolution`` (degrees) records the nominal spacing of the
    instrument network the points were drawn from; <= 0 means unknown.
    """

    lats: np.ndarray
    lons: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    source_resolution: float = 0.0

    def __post_init__(self):
        self.lats = np.ascontiguousarray(self.lats, dtype=np.float64)
        self.lons = np.ascontiguousarray(self.lons, dtype=np.float64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        self.mask = np.ascontiguousarray(self.mask, dtype=bool)
        n = self.lats.size
        if self.lons.shape != (n,) or self.values.shape[0] != n or self.mask.shape != self.values.shape:
            raise GridError("observation arrays have inconsistent shapes")
        if self.values.ndim != 2:
            raise GridError("observation values must be (n_points, channels)")
        if n and (np.abs(self.lats) > 90.0).any():
            raise GridError("observation latitudes outside [-90, 90]")
        if self.mask.any() and not np.isfinite(self.values[self.mask]).all():
            raise GridError("observed values must be finite")
        self.values = self.values.copy()
        self.values[~self.mask] = 0.0

    @property
    def n_points(self) -> int:
        return self.lats.size

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def coords(self) -> np.ndarray:
        """(n_points, 2) array of (lat, lon) pairs."""
        return np.stack([self.lats, self.lons], axis=1)

    @classmethod
    def empty(cls, n_channels: int, source_resolution: float = 0.0) -> "ObservationSet":
        return cls(
            np.zeros(0), np.zeros(0),
            np.zeros((0, n_channels), np.float32),
            np.zeros((0, n_channels), bool),
            source_resolution,
        )


@dataclass
class NormalizedCoords:
    """Per-point (u, v) in [-1, 1]; u from latitude, v from longitude."""

    u: np.ndarray
    v: np.ndarray
    periodic_v: bool = False

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)

    @property
    def n_points(self) -> int:
        return self.u.size


def _uniform_step(arr: np.ndarray, axis_name: str) -> float:
    if arr.ndim != 1 or arr.size < 1:
        raise GridError(f"{axis_name} array must be 1-D and non-empty")
    if arr.size == 1:
        return 0.0
    steps = np.diff(arr)
    step = float(steps[0])
    if step == 0.0 or np.abs(steps - step).max() > SPACING_TOL:
        raise GridError(f"{axis_name} spacing not uniform to {SPACING_TOL} degrees")
    return step


def make_equiangular_grid(
    n_lat: int,
    n_lon: int,
    lat_bounds: tuple[float, float] = (-90.0, 90.0),
    lon_bounds: tuple[float, float] = (0.0, 360.0),
) -> LatLonGrid:
    """Uniform grid over the given extents; defaults cover the full sphere.

    Latitude rows run north to south, cell-centered; longitude columns start at
    the western edge.  A (128, 256) global grid has 1.40625-degree spacing in
    both axes.
    """
    if n_lat < 1 or n_lon < 1:
        raise GridError("grid sizes must be positive")
    lat_lo, lat_hi = float(lat_bounds[0]), float(lat_bounds[1])
    lon_lo, lon_hi = float(lon_bounds[0]), float(lon_bounds[1])
    if lat_hi <= lat_lo or lon_hi <= lon_lo:
        raise GridError("inverted or empty grid extents")
    dlat = (lat_hi - lat_lo) / n_lat
    dlon = (lon_hi - lon_lo) / n_lon
    return LatLonGrid(n_lat, n_lon, lat_hi - 0.5 * dlat, -dlat, lon_lo, dlon)


def _check_in_domain(grid: LatLonGrid, lats: np.ndarray, lons: np.ndarray) -> None:
    lat_lo, lat_hi = grid.lat_bounds
    if lats.size and (lats.min() < lat_lo - 1e-9 or lats.max() > lat_hi + 1e-9):
        raise GridError("latitude outside grid domain")
    if grid.periodic_lon:
        return
    lon_lo, lon_hi = grid.lon_bounds
    if lons.size and (lons.min() < lon_lo - 1e-9 or lons.max() > lon_hi + 1e-9):
        raise GridError("longitude outside grid domain")


def normalize_coords(lats, lons, grid: LatLonGrid) -> NormalizedCoords:
    """Affine map of each axis onto [-1, 1] over the grid extents.

    The same map serves conditional and target points; it is monotone per axis
    and exactly invertible (see denormalize_coords).
    """
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    _check_in_domain(grid, lats, lons)
    lat_lo, lat_hi = grid.lat_bounds
    lon_lo, _ = grid.lon_bounds
    span = grid.lon_span
    u = 2.0 * (lats - lat_lo) / (lat_hi - lat_lo) - 1.0
    rel = lons - lon_lo
    if grid.periodic_lon:
        rel = np.mod(rel, span)
    v = 2.0 * rel / span - 1.0
    return NormalizedCoords(np.clip(u, -1.0, 1.0), np.clip(v, -1.0, 1.0), grid.periodic_lon)


def denormalize_coords(coords: NormalizedCoords, grid: LatLonGrid) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of normalize_coords on the grid domain."""
    lat_lo, lat_hi = grid.lat_bounds
    lon_lo, _ = grid.lon_bounds
    lats = lat_lo + (coords.u + 1.0) * 0.5 * (lat_hi - lat_lo)
    lons = lon_lo + (coords.v + 1.0) * 0.5 * grid.lon_span
    return lats, lons


def grid_cell_coords(grid: LatLonGrid, lats, lons) -> tuple[np.ndarray, np.ndarray]:
    """Fractional (row, col) grid-index coordinates of the given points.

    Row i / column j centers map exactly to (i, j).  Columns wrap on periodic
    grids; rows may fall outside [0, H-1] for points poleward of the first or
    last center (consumers clamp).
    """
    lats = np.asarray(lats, dtype=np.float64)
    lons = np.asarray(lons, dtype=np.float64)
    if grid.n_lat == 1:
        rows = np.zeros_like(lats)
    else:
        rows = (lats - grid.lat_start) / grid.lat_step
    if grid.n_lon == 1:
        cols = np.zeros_like(lons)
    else:
        cols = (lons - grid.lon_start) / grid.lon_step
        if grid.periodic_lon:
            cols = np.mod(cols, grid.n_lon)
    return rows, cols


def _axis_indices(x: np.ndarray, n: int, periodic: bool):
    """Split fractional indices into (lo, hi, frac) with clamping / wrapping."""
    if periodic:
        base = np.floor(x)
        frac = x - base
        i0 = base.astype(np.int64) % n
        i1 = (i0 + 1) % n
    else:
        xc = np.clip(x, 0.0, float(n - 1))
        i0 = np.minimum(np.floor(xc).astype(np.int64), n - 1)
        i1 = np.minimum(i0 + 1, n - 1)
        frac = xc - i0
    frac = np.where(frac < INDEX_SNAP, 0.0, frac)
    frac = np.where(frac > 1.0 - INDEX_SNAP, 1.0, frac)
    return i0, i1, frac


def bilinear_weights(grid: LatLonGrid, lats, lons):
    """Sparse bilinear interpolation stencils for the given points.

    Returns (flat_indices, weights), each (n_points, 4), such that a value
    sampled at point p is sum_k values.flat[flat_indices[p, k]] * weights[p, k].
    Rows clamp at the first/last latitude center; columns wrap when periodic.
    """
    rows, cols = grid_cell_coords(grid, lats, lons)
    r0, r1, fr = _axis_indices(rows, grid.n_lat, periodic=False)
    c0, c1, fc = _axis_indices(cols, grid.n_lon, grid.periodic_lon)
    w = grid.n_lon
    idx = np.stack([r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1], axis=1)
    wts = np.stack(
        [(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc], axis=1
    )
    return idx, wts


def bilinear_sample(field: Field, lats, lons) -> np.ndarray:
    """Bilinear read of every channel at the given points, shaped (n, C).

    Uses the lerp form v0 + f*(v1 - v0), so constants are reproduced exactly
    and on-grid points return the stored values bit-exactly.
    """
    grid = field.grid
    rows, cols = grid_cell_coords(grid, lats, lons)
    r0, r1, fr = _axis_indices(rows, grid.n_lat, periodic=False)
    c0, c1, fc = _axis_indices(cols, grid.n_lon, grid.periodic_lon)
    v = field.values
    out = np.empty((rows.size, v.shape[0]), dtype=v.dtype)
    for c in range(v.shape[0]):
        a = v[c][r0, c0]
        b = v[c][r0, c1]
        d = v[c][r1, c0]
        e = v[c][r1, c1]
        top = a + fc * (b - a)
        bot = d + fc * (e - d)
        out[:, c] = top + fr * (bot - top)
    return out


def sample_observations(truth: Field, obs_grid: LatLonGrid, ratio: float, seed: int) -> ObservationSet:
    """Uniform random subset of obs_grid points, valued by bilinear reads of truth.

    Exactly floor(ratio * H * W) points are drawn without replacement via a
    seeded shuffle, so the result is bit-reproducible given the seed.
    """
    if not 0.0 <= ratio <= 1.0:
        raise GridError(f"observation ratio {ratio} outside [0, 1]")
    n_total = obs_grid.n_lat * obs_grid.n_lon
    count = int(math.floor(ratio * n_total))
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(n_total)[:count]
    rows, cols = np.divmod(chosen, obs_grid.n_lon)
    lats = obs_grid.latitudes[rows]
    lons = obs_grid.longitudes[cols]
    values = bilinear_sample(truth, lats, lons)
    mask = np.ones_like(values, dtype=bool)
    return ObservationSet(lats, lons, values, mask, abs(obs_grid.lat_step))
