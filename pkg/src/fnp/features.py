"""Gridded functional representations exchanged between pipeline stages."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridError, LatLonGrid


@dataclass
class FeatureMap:
    """K-channel functional representation on a reference grid.

    Channel 0 is reserved for the conditional-point density on raw embeddings
    and must then be non-negative; stages that mix channels (the Fourier
    stack, DAM) drop the density semantics by setting the index to None.
    """

    grid: LatLonGrid
    values: np.ndarray
    density_channel_index: int | None = 0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 3 or self.values.shape[1:] != self.grid.shape:
            raise GridError(
                f"feature values shaped {self.values.shape}, expected (K, "
                f"{self.grid.n_lat}, {self.grid.n_lon})"
            )
        if not np.isfinite(self.values).all():
            raise GridError("feature values must be finite")
        if self.density_channel_index is not None:
            if (self.values[self.density_channel_index] < -1e-12).any():
                raise GridError("density channel must be non-negative")

    @property
    def n_channels(self) -> int:
        return self.values.shape[0]
