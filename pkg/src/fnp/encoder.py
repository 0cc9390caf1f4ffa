"""Set-convolution data embedding and the spatial-variable decoupled encoder.

A conditional set (gridded background treated as a full point set, or a sparse
observation set) is embedded onto a reference grid by a truncated Gaussian
kernel with one learnable length scale per input channel plus one for the
density channel.  Kernel-weighted channel sums are normalized by their own
kernel-weighted presence sums where those exceed DENSITY_EPS (zero otherwise),
then mapped pointwise to the embedding width, with the raw density prepended
as channel 0 of the output.

The decoupled representation concatenates one such embedding per variable
group with one embedding over all channels jointly.
"""
from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from . import kernels
from .features import FeatureMap
from .grids import Field, GridError, LatLonGrid, ObservationSet, grid_cell_coords

#: Density threshold below which normalized signal channels are set to zero.
DENSITY_EPS = 1e-8

#: Default initial kernel length scale, in reference-grid cells.
INIT_LENGTH_SCALE = 2.0


class GridScatter(torch.autograd.Function):
    """Kernel scatter of a point set onto a grid; differentiable in the scales.

    Point coordinates, values, and masks are data (no gradients); the backward
    pass returns only d(loss)/d(length scales), computed analytically by the
    selected kernels backend.
    """

    @staticmethod
    def forward(ctx, ell: torch.Tensor, rows, cols, values, mask, shape, periodic):
        h, w = shape
        ell_np = ell.detach().cpu().double().numpy()
        density, num, den = kernels.gridding_forward(
            rows, cols, values, mask, h, w, ell_np, periodic
        )
        ctx.saved = (ell_np, rows, cols, values, mask, h, w, periodic)
        ctx.dtype = ell.dtype
        to_t = lambda a: torch.from_numpy(a).to(ell.dtype)
        return to_t(density), to_t(num), to_t(den)

    @staticmethod
    def backward(ctx, g_density, g_num, g_den):
        ell_np, rows, cols, values, mask, h, w, periodic = ctx.saved
        g_ell = kernels.gridding_backward(
            rows, cols, values, mask, h, w, ell_np, periodic,
            np.ascontiguousarray(g_density.detach().cpu().double().numpy()),
            np.ascontiguousarray(g_num.detach().cpu().double().numpy()),
            np.ascontiguousarray(g_den.detach().cpu().double().numpy()),
        )
        return torch.from_numpy(g_ell).to(ctx.dtype), None, None, None, None, None, None


@torch.no_grad()
def _prepare_set(rows, cols, values, mask):
    """Cast point-set arrays to the contiguous dtypes the backends expect."""
    rows = np.ascontiguousarray(np.asarray(rows, dtype=np.float64))
    cols = np.ascontiguousarray(np.asarray(cols, dtype=np.float64))
    if torch.is_tensor(values):
        values = values.detach().cpu().numpy()
    values = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
    mask = np.ascontiguousarray(np.asarray(mask), dtype=np.uint8)
    return rows, cols, values, mask


class ConditionalSet:
    """A conditional source as scatter-ready arrays on a reference grid."""

    def __init__(self, rows, cols, values, mask, ref_grid: LatLonGrid):
        self.rows, self.cols, self.values, self.mask = _prepare_set(rows, cols, values, mask)
        self.ref_grid = ref_grid

    @property
    def n_points(self) -> int:
        return self.rows.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def select_channels(self, idx: list[int]) -> "ConditionalSet":
        sub = ConditionalSet.__new__(ConditionalSet)
        sub.rows, sub.cols = self.rows, self.cols
        sub.values = np.ascontiguousarray(self.values[:, idx])
        sub.mask = np.ascontiguousarray(self.mask[:, idx])
        sub.ref_grid = self.ref_grid
        return sub

    @classmethod
    def from_observations(cls, obs: ObservationSet, ref_grid: LatLonGrid) -> "ConditionalSet":
        rows, cols = grid_cell_coords(ref_grid, obs.lats, obs.lons)
        return cls(rows, cols, obs.values, obs.mask, ref_grid)

    @classmethod
    def from_field(cls, field: Field, ref_grid: LatLonGrid | None = None) -> "ConditionalSet":
        """Treat a gridded field as a fully observed point set."""
        ref = ref_grid or field.grid
        lat = np.repeat(field.grid.latitudes, field.grid.n_lon)
        lon = np.tile(field.grid.longitudes, field.grid.n_lat)
        rows, cols = grid_cell_coords(ref, lat, lon)
        values = field.values.reshape(field.n_channels, -1).T
        mask = np.ones_like(values, dtype=bool)
        return cls(rows, cols, values, mask, ref)

    @classmethod
    def empty(cls, n_channels: int, ref_grid: LatLonGrid) -> "ConditionalSet":
        return cls(np.zeros(0), np.zeros(0), np.zeros((0, n_channels)),
                   np.zeros((0, n_channels), bool), ref_grid)


class SetConvEmbedding(nn.Module):
    """SetConv layer: kernel scatter, density normalization, pointwise map.

    Output is (embed_dim + 1, H, W) with the density in channel 0.  Length
    scales are kept positive through an exponential reparameterization.
    """

    def __init__(self, in_channels: int, embed_dim: int,
                 init_length_scale: float = INIT_LENGTH_SCALE):
        super().__init__()
        self.in_channels = in_channels
        self.embed_dim = embed_dim
        self.log_scales = nn.Parameter(
            torch.full((in_channels + 1,), math.log(init_length_scale))
        )
        self.proj = nn.Linear(in_channels + 1, embed_dim)

    @property
    def length_scales(self) -> torch.Tensor:
        return self.log_scales.exp()

    def pre_map(self, cond: ConditionalSet) -> torch.Tensor:
        """Raw density and density-normalized signal channels, (C + 1, H, W)."""
        h, w = cond.ref_grid.shape
        density, num, den = GridScatter.apply(
            self.length_scales, cond.rows, cond.cols, cond.values, cond.mask,
            (h, w), cond.ref_grid.periodic_lon,
        )
        signal = torch.where(den > DENSITY_EPS, num / den.clamp_min(DENSITY_EPS),
                             torch.zeros((), dtype=num.dtype))
        return torch.cat([density.unsqueeze(0), signal], dim=0)

    def forward(self, cond: ConditionalSet) -> torch.Tensor:
        pre = self.pre_map(cond)
        # the network-facing density is divided by the kernel mass 2 pi ell^2,
        # i.e. coverage-fraction units: O(1) for a fully observed grid and
        # independent of the length scale, which keeps wide stacks trainable
        coverage = pre[:1] / (2.0 * math.pi * self.length_scales[0] ** 2)
        mapped = self.proj(torch.cat([coverage, pre[1:]]).permute(1, 2, 0)).permute(2, 0, 1)
        return torch.cat([coverage, mapped], dim=0)


def group_channel_indices(channels) -> list[list[int]]:
    """Channel indices per variable group, ordered by group id."""
    groups: dict[int, list[int]] = {}
    for i, ch in enumerate(channels):
        groups.setdefault(ch.group, []).append(i)
    out = [groups[g] for g in sorted(groups)]
    if any(len(g) == 0 for g in out):
        raise GridError("variable group with zero channels")
    return out


class DecoupledEncoder(nn.Module):
    """Spatial-variable decoupled representation of one conditional source.

    One spatial embedding per variable group plus one joint embedding over all
    channels, concatenated along the channel axis.  With ``decoupled=False``
    only the joint embedding is produced (the no-SVD ablation).
    """

    def __init__(self, channels, embed_dim: int, decoupled: bool = True,
                 init_length_scale: float = INIT_LENGTH_SCALE):
        super().__init__()
        self.group_indices = group_channel_indices(channels) if decoupled else []
        self.decoupled = decoupled
        self.spatial = nn.ModuleList(
            SetConvEmbedding(len(idx), embed_dim, init_length_scale)
            for idx in self.group_indices
        )
        self.joint = SetConvEmbedding(len(channels), embed_dim, init_length_scale)

    @property
    def out_channels(self) -> int:
        return (len(self.group_indices) + 1) * (self.joint.embed_dim + 1)

    def forward(self, cond: ConditionalSet) -> torch.Tensor:
        parts = [
            enc(cond.select_channels(idx))
            for enc, idx in zip(self.spatial, self.group_indices)
        ]
        parts.append(self.joint(cond))
        return torch.cat(parts, dim=0)


def set_conv_embed(cond: ConditionalSet, embedding: SetConvEmbedding) -> FeatureMap:
    """Functional wrapper around SetConvEmbedding for non-training callers."""
    with torch.no_grad():
        return FeatureMap(cond.ref_grid, embedding(cond).numpy())


def build_svd_representation(
    background: Field,
    observations: ObservationSet,
    bg_encoder: DecoupledEncoder,
    obs_encoder: DecoupledEncoder,
    bg_ref_grid: LatLonGrid,
    obs_ref_grid: LatLonGrid,
) -> tuple[FeatureMap, FeatureMap]:
    """Decoupled representations of both conditional sources."""
    with torch.no_grad():
        rb = bg_encoder(ConditionalSet.from_field(background, bg_ref_grid))
        ro = obs_encoder(ConditionalSet.from_observations(observations, obs_ref_grid))
    return FeatureMap(bg_ref_grid, rb.numpy()), FeatureMap(obs_ref_grid, ro.numpy())
