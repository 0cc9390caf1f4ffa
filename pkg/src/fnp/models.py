"""Assimilation model variants sharing one forward contract.

Every variant consumes a normalized background tensor (possibly an empty
conditional set in reconstruction mode), a list of normalized observation
sets, and a target grid, and produces per-channel Gaussian mean/variance on
the target grid.  Variants:

    fnp         decoupled embeddings + Fourier stacks + dynamic merge
    fnp_no_nfl  Fourier stacks replaced by same-width residual conv stacks
    fnp_no_dam  merge replaced by channel concatenation after alignment
    fnp_no_svd  one joint embedding over all channels per source
    convcnp     joint embeddings of both sources on the target grid,
                concatenated, residual conv stack, decoder
    interp_first observations cell-averaged onto the target grid first,
                then the on-grid fnp pipeline

Replacement conv stacks keep the stack's channel width (the Fourier layer
minus its spectral branch); no variant may exceed the full model's parameter
count, so an ablation can never win by added capacity.  Counts are exposed
via count_parameters for reporting.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn

from .dam import DynamicMerge, align_tensor
from .decoder import GaussianDecoder
from .encoder import ConditionalSet, DecoupledEncoder, SetConvEmbedding
from .grids import ChannelInfo, Field, GridError, LatLonGrid, ObservationSet, grid_cell_coords, make_equiangular_grid
from .nfl import FourierStack, pad_sphere

VARIANT_TAGS = ("fnp", "fnp_no_nfl", "fnp_no_dam", "fnp_no_svd", "convcnp", "interp_first")


@dataclass(frozen=True)
class ModelSettings:
    """Architecture hyperparameters shared by all variants."""

    channels: tuple[ChannelInfo, ...]
    embed_dim: int = 16
    n_layers: int = 4
    modes_lat: int = 4
    modes_lon: int = 8
    decoder_hidden: tuple[int, ...] = (64, 64)
    variance_floor: float = 1e-6
    init_length_scale: float = 2.0
    shared_encoder: bool = False
    dam_retain: str = "verbatim"
    dam_selection: str = "hard"
    dam_soft_tau: float = 0.1
    smoother_kernel_size: int = 3
    act_position: str = "pre_residual"


@dataclass
class Batch:
    """One forward batch in normalized units."""

    background: torch.Tensor  # (B, C, H, W); ignored when bg_present is False
    bg_present: bool
    obs: list[ObservationSet]
    target_grid: LatLonGrid
    obs_grid: LatLonGrid


def observation_reference_grid(obs: ObservationSet, target_grid: LatLonGrid) -> LatLonGrid:
    """Reference grid for observation embeddings.

    Reconstructs an equiangular grid at the set's source resolution over the
    target domain; falls back to the target grid when the resolution is
    unknown or the set is empty.
    """
    res = obs.source_resolution
    if obs.n_points == 0 or res <= 0:
        return target_grid
    lat_lo, lat_hi = target_grid.lat_bounds
    lon_lo, lon_hi = target_grid.lon_bounds
    n_lat = max(1, round((lat_hi - lat_lo) / res))
    n_lon = max(1, round((lon_hi - lon_lo) / res))
    return make_equiangular_grid(n_lat, n_lon, (lat_lo, lat_hi), (lon_lo, lon_hi))


class ResidualConvStack(nn.Module):
    """Same-width residual convolution stack: the Fourier layer minus its
    spectral branch, activation(conv(x)) + x per layer, identity at init."""

    def __init__(self, channels: int, n_layers: int, kernel_size: int = 3):
        super().__init__()
        self.convs = nn.ModuleList()
        for _ in range(n_layers):
            conv = nn.Conv2d(channels, channels, kernel_size)
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)
            self.convs.append(conv)
        self.pad = kernel_size // 2
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for conv in self.convs:
            x = self.act(conv(pad_sphere(x, self.pad))) + x
        return x


class _GridPointCache:
    """Static (rows, cols) of full grids, reused across forward calls."""

    def __init__(self):
        self._cache: dict[LatLonGrid, tuple[np.ndarray, np.ndarray]] = {}

    def get(self, grid: LatLonGrid) -> tuple[np.ndarray, np.ndarray]:
        hit = self._cache.get(grid)
        if hit is None:
            lat = np.repeat(grid.latitudes, grid.n_lon)
            lon = np.tile(grid.longitudes, grid.n_lat)
            hit = grid_cell_coords(grid, lat, lon)
            self._cache[grid] = hit
        return hit


_GRID_POINTS = _GridPointCache()


def field_sets_from_tensor(values: torch.Tensor, grid: LatLonGrid,
                           present: bool) -> list[ConditionalSet]:
    """Per-sample full-grid conditional sets from a (B, C, H, W) tensor."""
    b, c = values.shape[0], values.shape[1]
    if not present:
        return [ConditionalSet.empty(c, grid) for _ in range(b)]
    rows, cols = _GRID_POINTS.get(grid)
    flat = values.detach().cpu().numpy().reshape(b, c, -1)
    mask = np.ones((rows.size, c), dtype=bool)
    return [ConditionalSet(rows, cols, flat[i].T, mask, grid) for i in range(b)]


def obs_sets(obs: list[ObservationSet], ref_grid: LatLonGrid) -> list[ConditionalSet]:
    return [ConditionalSet.from_observations(o, ref_grid) for o in obs]


def _coords_tensor(grid: LatLonGrid, batch: int, dtype) -> torch.Tensor:
    from .decoder import grid_target_coords

    uv = grid_target_coords(grid)
    t = torch.from_numpy(np.stack([uv.u, uv.v]).reshape(2, *grid.shape)).to(dtype)
    return t.unsqueeze(0).expand(batch, -1, -1, -1)


def _encode(encoder: DecoupledEncoder, sets: list[ConditionalSet]) -> torch.Tensor:
    return torch.stack([encoder(s) for s in sets])


class FNPModel(nn.Module):
    """Configurable FNP pipeline covering the fnp / no-NFL / no-DAM / no-SVD variants."""

    def __init__(self, settings: ModelSettings, spectral: bool = True,
                 use_dam: bool = True, decoupled: bool = True):
        super().__init__()
        s = settings
        self.settings = s
        self.n_channels = len(s.channels)
        self.bg_encoder = DecoupledEncoder(s.channels, s.embed_dim, decoupled, s.init_length_scale)
        self.obs_encoder = (
            self.bg_encoder if s.shared_encoder
            else DecoupledEncoder(s.channels, s.embed_dim, decoupled, s.init_length_scale)
        )
        width = self.bg_encoder.out_channels

        def make_stack():
            if spectral:
                return FourierStack(width, s.n_layers, s.modes_lat, s.modes_lon,
                                    act_position=s.act_position)
            return ResidualConvStack(width, s.n_layers)

        self.bg_stack = make_stack()
        self.obs_stack = make_stack()
        self.use_dam = use_dam
        if use_dam:
            self.merge = DynamicMerge(width, None, s.smoother_kernel_size,
                                      s.dam_retain, s.dam_selection, s.dam_soft_tau)
            dec_in = self.merge.out_channels
        else:
            self.merge = None
            dec_in = 2 * width
        self.decoder = GaussianDecoder(dec_in, self.n_channels, s.decoder_hidden, s.variance_floor)

    def representation(self, batch: Batch) -> torch.Tensor:
        dtype = next(self.parameters()).dtype
        bg_cs = field_sets_from_tensor(batch.background, batch.target_grid, batch.bg_present)
        ob_cs = obs_sets(batch.obs, batch.obs_grid)
        rb = self.bg_stack(_encode(self.bg_encoder, bg_cs).to(dtype))
        ro = self.obs_stack(_encode(self.obs_encoder, ob_cs).to(dtype))
        if self.use_dam:
            return self.merge(rb, ro, batch.obs_grid, batch.target_grid)
        ro = align_tensor(ro, batch.obs_grid, batch.target_grid)
        return torch.cat([rb, ro], dim=-3)

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        rep = self.representation(batch)
        coords = _coords_tensor(batch.target_grid, rep.shape[0], rep.dtype)
        return self.decoder(rep, coords)


class ConvCNPModel(nn.Module):
    """Joint embeddings of both sources on the target grid, merged by concatenation."""

    def __init__(self, settings: ModelSettings):
        super().__init__()
        s = settings
        self.settings = s
        self.n_channels = len(s.channels)
        c = self.n_channels
        self.bg_embed = SetConvEmbedding(c, s.embed_dim, s.init_length_scale)
        self.obs_embed = (
            self.bg_embed if s.shared_encoder
            else SetConvEmbedding(c, s.embed_dim, s.init_length_scale)
        )
        width = 2 * (s.embed_dim + 1)
        self.stack = ResidualConvStack(width, s.n_layers)
        self.decoder = GaussianDecoder(width, c, s.decoder_hidden, s.variance_floor)

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        dtype = next(self.parameters()).dtype
        grid = batch.target_grid
        bg_cs = field_sets_from_tensor(batch.background, grid, batch.bg_present)
        ob_cs = obs_sets(batch.obs, grid)  # embedded directly onto the target grid
        rb = torch.stack([self.bg_embed(s) for s in bg_cs]).to(dtype)
        ro = torch.stack([self.obs_embed(s) for s in ob_cs]).to(dtype)
        rep = self.stack(torch.cat([rb, ro], dim=-3))
        coords = _coords_tensor(grid, rep.shape[0], rep.dtype)
        return self.decoder(rep, coords)


def aggregate_to_grid(obs: ObservationSet, grid: LatLonGrid) -> ObservationSet:
    """Cell-average observations onto grid centers (the interpolate-first rule).

    Each observation is assigned to its nearest cell center; per-cell,
    per-channel means are recorded where at least one observation fell, and the
    result is an on-grid observation set.  Intra-cell structure is lost.
    """
    h, w = grid.shape
    rows, cols = grid_cell_coords(grid, obs.lats, obs.lons)
    r = np.clip(np.rint(rows).astype(np.int64), 0, h - 1)
    c = np.rint(cols).astype(np.int64) % w if grid.periodic_lon else np.clip(
        np.rint(cols).astype(np.int64), 0, w - 1)
    flat = r * w + c
    n_ch = obs.n_channels
    sums = np.zeros((h * w, n_ch))
    counts = np.zeros((h * w, n_ch))
    np.add.at(sums, flat, np.where(obs.mask, obs.values, 0.0))
    np.add.at(counts, flat, obs.mask.astype(np.float64))
    hit = counts.max(axis=1) > 0
    idx = np.nonzero(hit)[0]
    mask = counts[idx] > 0
    values = np.zeros((idx.size, n_ch), dtype=np.float32)
    values[mask] = (sums[idx][mask] / counts[idx][mask]).astype(np.float32)
    return ObservationSet(
        grid.latitudes[idx // w], grid.longitudes[idx % w],
        values, mask, abs(grid.lat_step),
    )


class InterpFirstModel(nn.Module):
    """Interpolate-then-assimilate baseline: aggregate onto the grid, then run fnp."""

    def __init__(self, settings: ModelSettings):
        super().__init__()
        self.inner = FNPModel(settings)
        self.settings = settings
        self.n_channels = self.inner.n_channels

    def forward(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        grid = batch.target_grid
        gridded = [aggregate_to_grid(o, grid) for o in batch.obs]
        inner_batch = Batch(batch.background, batch.bg_present, gridded, grid, grid)
        return self.inner(inner_batch)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def build_variant(tag: str, settings: ModelSettings, seed: int = 0) -> nn.Module:
    """Instantiate a variant at its natural width, capped at the fnp budget.

    Replacements never exceed the full model's parameter count, so an ablation
    cannot win a comparison through added capacity alone.
    """
    if tag not in VARIANT_TAGS:
        raise GridError(f"unknown model variant {tag!r}")
    torch.manual_seed(seed)
    if tag == "fnp":
        return FNPModel(settings)
    if tag == "interp_first":
        return InterpFirstModel(settings)
    budget = count_parameters(FNPModel(settings))
    torch.manual_seed(seed)
    if tag == "fnp_no_nfl":
        model = FNPModel(settings, spectral=False)
    elif tag == "fnp_no_dam":
        model = FNPModel(settings, use_dam=False)
    elif tag == "fnp_no_svd":
        model = FNPModel(settings, decoupled=False)
    else:
        model = ConvCNPModel(settings)
    if count_parameters(model) > 1.1 * budget:
        raise GridError(f"variant {tag} exceeds the parameter budget")
    return model
