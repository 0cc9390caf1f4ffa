import numpy as np
import pytest
import torch

from fnp.grids import ChannelInfo, Field, ObservationSet, make_equiangular_grid


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)


@pytest.fixture
def small_grid():
    return make_equiangular_grid(8, 16)


@pytest.fixture
def channels():
    return (ChannelInfo("z500", 0), ChannelInfo("t2m", 1), ChannelInfo("u10", 1))


def random_field(grid, channels, seed=0):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((len(channels), grid.n_lat, grid.n_lon)).astype(np.float32)
    return Field(grid, values, channels)


def random_obs(grid, n_points, n_channels, seed=0, masked=False):
    rng = np.random.default_rng(seed)
    lat_lo, lat_hi = grid.lat_bounds
    lon_lo, lon_hi = grid.lon_bounds
    lats = rng.uniform(lat_lo, lat_hi, n_points)
    lons = rng.uniform(lon_lo, lon_hi - 1e-6, n_points)
    values = rng.standard_normal((n_points, n_channels)).astype(np.float32)
    if masked:
        mask = rng.random((n_points, n_channels)) > 0.3
    else:
        mask = np.ones((n_points, n_channels), dtype=bool)
    return ObservationSet(lats, lons, values, mask, abs(grid.lat_step))
