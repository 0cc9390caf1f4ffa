"""Dynamic alignment and merge of the two conditional representations.

The observation representation is bilinearly aligned to the target grid
(periodic in longitude, clamped at the latitude edges, identity when the grids
already match).  A pointwise linear layer extracts shared features from the
channel concatenation of both sources; each source's channel-wise Euclidean
distance to the shared features forms its similarity map, and at every grid
point the whole channel vector of exactly one source is kept:

    keep background where sim_bg >= sim_obs, observations otherwise.

That comparison is implemented verbatim; since the similarity is a distance,
the companion "prose" mode flips it to retain the smaller distance instead
(config dam_retain = verbatim | prose).  The selection mask is constant under
differentiation: gradients flow only through the selected branch and the
shared-feature path.  A smooth soft-selection blend is available for ablation
(config dam_selection = hard | soft).  Selected and shared features are
concatenated and passed through one smoothing convolution (periodic longitude,
reflected latitude).
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .features import FeatureMap
from .grids import GridError, LatLonGrid
from .nfl import pad_sphere


def _interp_axis_indices(dst_coords: np.ndarray, n_src: int, periodic: bool):
    """1-D bilinear gather indices/fractions, matching grids._axis_indices."""
    from .grids import _axis_indices

    i0, i1, frac = _axis_indices(dst_coords, n_src, periodic)
    return (
        torch.from_numpy(i0),
        torch.from_numpy(i1),
        torch.from_numpy(np.ascontiguousarray(frac, dtype=np.float64)),
    )


def align_tensor(values: torch.Tensor, src_grid: LatLonGrid, dst_grid: LatLonGrid) -> torch.Tensor:
    """Bilinear regrid of (..., H_src, W_src) onto dst_grid; identity if equal.

    Domains must agree; latitude rows clamp at the first/last source center,
    longitude wraps when the source grid is periodic.  Constants and bilinear
    ramps are reproduced exactly (lerp form v0 + f*(v1 - v0)).
    """
    if src_grid == dst_grid:
        return values
    if src_grid.lat_bounds != dst_grid.lat_bounds or src_grid.lon_bounds != dst_grid.lon_bounds:
        raise GridError("alignment requires matching grid domains")
    from .grids import grid_cell_coords

    rows, _ = grid_cell_coords(src_grid, dst_grid.latitudes, np.zeros(dst_grid.n_lat))
    _, cols = grid_cell_coords(src_grid, np.zeros(dst_grid.n_lon), dst_grid.longitudes)
    r0, r1, fr = _interp_axis_indices(rows, src_grid.n_lat, periodic=False)
    c0, c1, fc = _interp_axis_indices(cols, src_grid.n_lon, src_grid.periodic_lon)
    fr = fr.to(values.dtype).view(-1, 1)
    fc = fc.to(values.dtype).view(1, -1)
    top = values.index_select(-2, r0)
    bot = values.index_select(-2, r1)
    rows_interp = top + fr * (bot - top)
    left = rows_interp.index_select(-1, c0)
    right = rows_interp.index_select(-1, c1)
    return left + fc * (right - left)


def channel_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Euclidean distance over the channel dimension of (..., K, H, W) tensors."""
    if a.shape != b.shape:
        raise GridError("similarity inputs must have identical shapes")
    return ((a - b) ** 2).sum(dim=-3).sqrt()


def hard_select(y_bg: torch.Tensor, y_obs: torch.Tensor,
                sim_bg: torch.Tensor, sim_obs: torch.Tensor,
                retain: str = "verbatim") -> torch.Tensor:
    """Whole-vector per-point selection; ties keep the background branch."""
    if y_bg.shape != y_obs.shape or sim_bg.shape != sim_obs.shape:
        raise GridError("selection inputs must have identical shapes")
    if retain == "verbatim":
        keep_bg = sim_bg >= sim_obs
    elif retain == "prose":
        keep_bg = sim_bg <= sim_obs
    else:
        raise GridError(f"unknown retain mode {retain!r}")
    return torch.where(keep_bg.unsqueeze(-3), y_bg, y_obs)


def soft_select(y_bg: torch.Tensor, y_obs: torch.Tensor,
                sim_bg: torch.Tensor, sim_obs: torch.Tensor,
                retain: str = "verbatim", tau: float = 0.1) -> torch.Tensor:
    """Sigmoid blend replacing the hard branch, for the selection ablation."""
    sign = 1.0 if retain == "verbatim" else -1.0
    w_bg = torch.sigmoid(sign * (sim_bg - sim_obs) / tau).unsqueeze(-3)
    return w_bg * y_bg + (1.0 - w_bg) * y_obs


class DynamicMerge(nn.Module):
    """Align, extract shared features, select per point, smooth."""

    def __init__(self, in_channels: int, shared_channels: int | None = None,
                 smoother_kernel_size: int = 3, retain: str = "verbatim",
                 selection: str = "hard", soft_tau: float = 0.1):
        super().__init__()
        k = shared_channels or in_channels
        if k != in_channels:
            raise GridError("shared width must equal the source width for similarity")
        if selection not in ("hard", "soft"):
            raise GridError(f"unknown selection mode {selection!r}")
        self.shared = nn.Conv2d(2 * in_channels, k, kernel_size=1)
        self.smoother = nn.Conv2d(in_channels + k, in_channels + k, smoother_kernel_size)
        self.pad = smoother_kernel_size // 2
        self.retain = retain
        self.selection = selection
        self.soft_tau = soft_tau
        self.out_channels = in_channels + k

    def forward(self, bg: torch.Tensor, obs: torch.Tensor,
                obs_grid: LatLonGrid, target_grid: LatLonGrid) -> torch.Tensor:
        obs_aligned = align_tensor(obs, obs_grid, target_grid)
        shared = self.shared(torch.cat([bg, obs_aligned], dim=-3))
        sim_bg = channel_distance(bg, shared)
        sim_obs = channel_distance(obs_aligned, shared)
        if self.selection == "hard":
            selected = hard_select(bg, obs_aligned, sim_bg, sim_obs, self.retain)
        else:
            selected = soft_select(bg, obs_aligned, sim_bg, sim_obs, self.retain, self.soft_tau)
        merged = torch.cat([selected, shared], dim=-3)
        return self.smoother(pad_sphere(merged, self.pad))


# ---------------------------------------------------------------------------
# Functional interface on FeatureMaps (contract surface for non-training use)


def _to_tensor(fmap: FeatureMap) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(fmap.values))


def align(obs_features: FeatureMap, target_grid: LatLonGrid) -> FeatureMap:
    """Bilinear interpolation of every channel onto the target grid."""
    out = align_tensor(_to_tensor(obs_features), obs_features.grid, target_grid)
    return FeatureMap(target_grid, out.numpy(), obs_features.density_channel_index)


def shared_features(bg: FeatureMap, obs_aligned: FeatureMap,
                    weight: np.ndarray, bias: np.ndarray | None = None) -> FeatureMap:
    """Pointwise linear map of the channel concatenation, (k, H, W)."""
    if bg.grid != obs_aligned.grid:
        raise GridError("shared-feature inputs must live on the same grid")
    stacked = np.concatenate([bg.values, obs_aligned.values], axis=0)
    if weight.shape[1] != stacked.shape[0]:
        raise GridError("shared-map width does not match concatenated channels")
    out = np.einsum("kc,chw->khw", weight, stacked)
    if bias is not None:
        out = out + bias[:, None, None]
    return FeatureMap(bg.grid, out, density_channel_index=None)


def similarity(y: FeatureMap, y_shared: FeatureMap) -> np.ndarray:
    """Per-point channel-dimension Euclidean distance map, (H, W)."""
    if y.values.shape != y_shared.values.shape:
        raise GridError("similarity inputs must have identical shapes")
    return np.sqrt(((y.values - y_shared.values) ** 2).sum(axis=0))


def select_merge(y_bg: FeatureMap, y_obs: FeatureMap,
                 sim_bg: np.ndarray, sim_obs: np.ndarray,
                 retain: str = "verbatim") -> FeatureMap:
    """Hard per-point selection of one source's full channel vector."""
    out = hard_select(
        _to_tensor(y_bg), _to_tensor(y_obs),
        torch.from_numpy(np.ascontiguousarray(sim_bg)),
        torch.from_numpy(np.ascontiguousarray(sim_obs)),
        retain,
    )
    return FeatureMap(y_bg.grid, out.numpy(), density_channel_index=None)


def smooth_concat(selected: FeatureMap, shared: FeatureMap,
                  kernel: np.ndarray, bias: np.ndarray | None = None) -> FeatureMap:
    """Channel concatenation followed by one spatial smoothing convolution.

    ``kernel`` is (out_channels, in_channels, kh, kw) with odd kh == kw;
    boundary rule is periodic longitude / reflected latitude.
    """
    if selected.grid != shared.grid:
        raise GridError("smoothing inputs must live on the same grid")
    merged = np.concatenate([selected.values, shared.values], axis=0)
    if kernel.shape[1] != merged.shape[0]:
        raise GridError("smoothing kernel does not match concatenated channels")
    x = torch.from_numpy(merged).unsqueeze(0)
    k = torch.from_numpy(np.ascontiguousarray(kernel)).to(x.dtype)
    b = None if bias is None else torch.from_numpy(np.ascontiguousarray(bias)).to(x.dtype)
    out = torch.conv2d(pad_sphere(x, kernel.shape[-1] // 2), k, b)
    return FeatureMap(selected.grid, out.squeeze(0).numpy(), density_channel_index=None)
