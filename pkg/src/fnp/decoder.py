"""Pointwise Gaussian decoder and the negative log-likelihood loss.

The decoder maps (features at a target location, normalized target
coordinates) through a shared MLP trunk to per-channel mean and variance.
Variance is produced by a softplus transform shifted by a strictly positive
floor, so it maps all reals into (variance_floor, inf).  Off-grid targets read
the representation with the same bilinear rule used by alignment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import FeatureMap
from .grids import GridError, LatLonGrid, NormalizedCoords, normalize_coords

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class AnalysisDistribution:
    """Per-target, per-channel Gaussian analysis: mean and strictly positive variance."""

    mean: np.ndarray
    variance: np.ndarray
    variance_floor: float = 0.0

    def __post_init__(self):
        self.mean = np.asarray(self.mean)
        self.variance = np.asarray(self.variance)
        if self.mean.shape != self.variance.shape:
            raise GridError("mean and variance shapes differ")
        if not (np.isfinite(self.mean).all() and np.isfinite(self.variance).all()):
            raise GridError("analysis moments must be finite")
        if (self.variance <= 0).any():
            raise GridError("analysis variance must be strictly positive")


def grid_target_coords(grid: LatLonGrid) -> NormalizedCoords:
    """Normalized coordinates of every grid point, row-major."""
    lat = np.repeat(grid.latitudes, grid.n_lon)
    lon = np.tile(grid.longitudes, grid.n_lat)
    return normalize_coords(lat, lon, grid)


class GaussianDecoder(nn.Module):
    """Shared-trunk MLP with per-channel mean/variance heads."""

    def __init__(self, in_channels: int, out_channels: int,
                 hidden: tuple[int, ...] = (64, 64), variance_floor: float = 1e-6):
        super().__init__()
        self.out_channels = out_channels
        self.variance_floor = variance_floor
        widths = [in_channels + 2, *hidden]
        self.trunk = nn.ModuleList(
            nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:])
        )
        self.head = nn.Linear(widths[-1], 2 * out_channels)

    def _pointwise(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        x = features
        for layer in self.trunk:
            x = F.gelu(layer(x))
        out = self.head(x)
        mean, raw_var = out.chunk(2, dim=-1)
        # clamp keeps the variance strictly above the floor even when softplus
        # underflows to zero in float32
        spread = F.softplus(raw_var).clamp_min(1e-3 * self.variance_floor)
        return mean, self.variance_floor + spread

    def forward(self, rep: torch.Tensor, coords_uv: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Decode (..., K, H, W) features with (..., 2, H, W) coordinates.

        Returns per-channel mean and variance shaped (..., C, H, W).
        """
        stacked = torch.cat([rep, coords_uv], dim=-3)
        mean, var = self._pointwise(stacked.movedim(-3, -1))
        return mean.movedim(-1, -3), var.movedim(-1, -3)

    def decode_points(self, features_at: torch.Tensor,
                      coords: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Decode pre-gathered per-point features (n, K) with coords (n, 2).

        Returns mean and variance shaped (C, n).
        """
        mean, var = self._pointwise(torch.cat([features_at, coords], dim=-1))
        return mean.T, var.T


def decode(rep: FeatureMap, target_coords: NormalizedCoords,
           decoder: GaussianDecoder) -> AnalysisDistribution:
    """Decode a representation at arbitrary targets (on- or off-grid).

    Off-grid targets read the representation bilinearly, with the same
    boundary rules as alignment.
    """
    from .grids import bilinear_weights, denormalize_coords

    lats, lons = denormalize_coords(target_coords, rep.grid)
    idx, wts = bilinear_weights(rep.grid, lats, lons)
    flat = rep.values.reshape(rep.n_channels, -1)
    feats = np.einsum("cnk,nk->nc", flat[:, idx], wts)
    uv = np.stack([target_coords.u, target_coords.v], axis=1)
    with torch.no_grad():
        mean, var = decoder.decode_points(
            torch.from_numpy(feats).float(),
            torch.from_numpy(uv).float(),
        )
    return AnalysisDistribution(mean.numpy(), var.numpy(), decoder.variance_floor)


def gaussian_nll(mean: torch.Tensor, variance: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over all elements of 0.5 log(2 pi sigma^2) + (x - mu)^2 / (2 sigma^2)."""
    if mean.shape != target.shape or variance.shape != target.shape:
        raise GridError("loss inputs must have identical shapes")
    if (variance <= 0).any():
        raise GridError("variance must be strictly positive")
    return (0.5 * (LOG_2PI + variance.log()) + (target - mean) ** 2 / (2.0 * variance)).mean()


def gaussian_nll_np(dist: AnalysisDistribution, truth: np.ndarray) -> float:
    """Numpy entry point for the same loss on an AnalysisDistribution."""
    return float(
        gaussian_nll(
            torch.from_numpy(np.asarray(dist.mean, dtype=np.float64)),
            torch.from_numpy(np.asarray(dist.variance, dtype=np.float64)),
            torch.from_numpy(np.asarray(truth, dtype=np.float64)),
        )
    )
