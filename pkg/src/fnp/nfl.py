"""Neural Fourier layers: truncated spectral mixing + local convolution + shortcut.

Each layer computes activation(spectral(x) + conv(x)) + x with a zero-centered
smooth nonlinearity (GELU), so zeroed branches reduce the layer to the
identity.  The spectral branch keeps the lowest modes_lat latitude frequencies
(positive and negative) and the lowest modes_lon longitude frequencies of the
real-input FFT (Hermitian on the longitude axis), applies one complex
channels x channels map per retained mode, zeroes everything else, and
inverse-transforms.  Convolutions pad periodically in longitude and by
reflection in latitude.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import FeatureMap


def pad_sphere(x: torch.Tensor, pad: int) -> torch.Tensor:
    """Periodic longitude / reflected latitude padding for (..., H, W) tensors."""
    if pad == 0:
        return x
    x = F.pad(x, (pad, pad, 0, 0), mode="circular")
    return F.pad(x, (0, 0, pad, pad), mode="reflect")


def retained_rows(n_rows: int, modes: int) -> torch.Tensor:
    """Row indices whose latitude frequency magnitude is below ``modes``.

    Rows r with min(r, n_rows - r) < modes; the set is symmetric under
    frequency negation and covers every row once modes reaches
    floor(n_rows / 2) + 1.
    """
    r = torch.arange(n_rows)
    return r[torch.minimum(r, n_rows - r) < modes]


def row_frequency_slots(n_rows: int, modes: int) -> torch.Tensor:
    """Weight-slot index (0..2*modes-2) for each retained row.

    Slot s < modes holds frequency +s; slot modes + k holds frequency -(k+1).
    """
    rows = retained_rows(n_rows, modes)
    freq = torch.where(rows <= n_rows // 2, rows, rows - n_rows)
    return torch.where(freq >= 0, freq, modes - 1 - freq)


class SpectralChannelMix(nn.Module):
    """Truncated frequency-domain linear map over channels.

    Weights are stored per frequency slot so the layer remains usable on any
    grid at least as fine as the configured mode counts; on coarser grids the
    unused slots are simply not addressed.
    """

    def __init__(self, channels: int, modes_lat: int, modes_lon: int,
                 init_scale: float | None = None):
        super().__init__()
        self.channels = channels
        self.modes_lat = modes_lat
        self.modes_lon = modes_lon
        n_slots = 2 * modes_lat - 1
        scale = (1.0 / channels) if init_scale is None else init_scale
        self.weight_real = nn.Parameter(scale * torch.randn(channels, channels, n_slots, modes_lon))
        self.weight_imag = nn.Parameter(scale * torch.randn(channels, channels, n_slots, modes_lon))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, w = x.shape[-2], x.shape[-1]
        m_lat = min(self.modes_lat, h // 2 + 1)
        m_lon = min(self.modes_lon, w // 2 + 1)
        rows = retained_rows(h, m_lat).to(x.device)
        slots = row_frequency_slots(h, m_lat).to(x.device)
        coeff = torch.fft.rfft2(x, dim=(-2, -1))
        sub = coeff[..., rows, :m_lon]
        weight = torch.complex(self.weight_real, self.weight_imag)[:, :, slots, :m_lon]
        mixed = torch.einsum("...irm,iorm->...orm", sub, weight)
        out = torch.zeros_like(coeff)
        out[..., rows, :m_lon] = mixed
        return torch.fft.irfft2(out, s=(h, w), dim=(-2, -1))


class NeuralFourierLayer(nn.Module):
    def __init__(self, channels: int, modes_lat: int, modes_lon: int,
                 kernel_size: int = 3, act_position: str = "pre_residual"):
        super().__init__()
        if kernel_size % 2 == 0:
            raise ValueError("convolution kernel width must be odd")
        if act_position not in ("pre_residual", "post_residual"):
            raise ValueError(f"unknown activation position {act_position!r}")
        self.spectral = SpectralChannelMix(channels, modes_lat, modes_lon, init_scale=0.0)
        self.conv = nn.Conv2d(channels, channels, kernel_size)
        # layers start as the identity (same treatment as the conv stacks):
        # both branches zeroed, gradients still flow to both weight sets
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)
        self.pad = kernel_size // 2
        self.act = nn.GELU()
        self.act_position = act_position

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if min(x.shape[-2:]) < self.conv.kernel_size[0]:
            raise ValueError("grid smaller than convolution kernel support")
        branches = self.spectral(x) + self.conv(pad_sphere(x, self.pad))
        if self.act_position == "pre_residual":
            return self.act(branches) + x
        return self.act(branches + x)


class FourierStack(nn.Module):
    """Shape-preserving stack of neural Fourier layers."""

    def __init__(self, channels: int, n_layers: int, modes_lat: int, modes_lon: int,
                 kernel_size: int = 3, act_position: str = "pre_residual"):
        super().__init__()
        self.layers = nn.ModuleList(
            NeuralFourierLayer(channels, modes_lat, modes_lon, kernel_size, act_position)
            for _ in range(n_layers)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


@dataclass
class NFLParams:
    """Configuration mirror for the functional entry point."""

    n_layers: int = 4
    modes_lat: int = 4
    modes_lon: int = 8
    kernel_size: int = 3
    act_position: str = "pre_residual"


def nfl_forward(fmap: FeatureMap, stack: FourierStack) -> FeatureMap:
    """Apply a stack to a FeatureMap, enforcing the Nyquist mode limits."""
    h, w = fmap.grid.shape
    for layer in stack.layers:
        if layer.spectral.modes_lat > h // 2 + 1 or layer.spectral.modes_lon > w // 2 + 1:
            raise ValueError("retained mode counts exceed the grid Nyquist limit")
    with torch.no_grad():
        out = stack(torch.from_numpy(np.ascontiguousarray(fmap.values, dtype=np.float32)))
    return FeatureMap(fmap.grid, out.numpy(), density_channel_index=None)


def build_stack(channels: int, params: NFLParams) -> FourierStack:
    return FourierStack(channels, params.n_layers, params.modes_lat,
                        params.modes_lon, params.kernel_size, params.act_position)
