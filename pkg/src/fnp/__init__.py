"""Arbitrary-resolution data assimilation with Fourier neural processes.

Gridded backgrounds and sparse observations of any resolution are fused into
a per-point Gaussian analysis.  The package also ships a classical variational
oracle, comparison baselines, synthetic twin-experiment data, and a training /
evaluation harness behind the ``fnp`` command-line tool.
"""

__version__ = "0.1.0"

from .grids import (  # noqa: F401
    ChannelInfo,
    Field,
    LatLonGrid,
    NormalizedCoords,
    ObservationSet,
    make_equiangular_grid,
    normalize_coords,
    sample_observations,
)
