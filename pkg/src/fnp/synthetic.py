"""Synthetic truth fields and lead-time-dependent forecast backgrounds.

Truth fields are zero-mean Gaussian random fields synthesized spectrally on
the index torus with a power-law energy spectrum; backgrounds are produced by
a blur-plus-correlated-noise surrogate whose error grows with forecast lead
time and whose output is smoother than the truth, the two properties the
assimilation experiments rely on.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import fileio
from .grids import ChannelInfo, Field, LatLonGrid


class SpecError(ValueError):
    """Invalid field or background specification."""


@dataclass(frozen=True)
class FieldSpec:
    """Statistical description of a synthetic multi-channel truth field.

    spectral_slope is the exponent of the isotropic power spectrum (<= 0 for
    red spectra; 0 is white).  amplitude sets the per-channel standard
    deviation.  cross_channel_corr is the common pairwise correlation.
    """

    channels: tuple[ChannelInfo, ...]
    spectral_slope: float = -2.5
    amplitude: tuple[float, ...] = ()
    cross_channel_corr: float = 0.0

    def __post_init__(self):
        if not self.channels:
            raise SpecError("at least one channel required")
        amp = self.amplitude or tuple(1.0 for _ in self.channels)
        object.__setattr__(self, "amplitude", tuple(float(a) for a in amp))
        if len(self.amplitude) != len(self.channels):
            raise SpecError("one amplitude per channel required")
        if any(a <= 0 for a in self.amplitude):
            raise SpecError("amplitudes must be positive")
        if self.spectral_slope > 0:
            raise SpecError("spectral slope must be <= 0 (red or white spectra)")
        c = len(self.channels)
        rho = self.cross_channel_corr
        if not -1.0 <= rho <= 1.0:
            raise SpecError("cross-channel correlation outside [-1, 1]")
        if c > 1 and rho < -1.0 / (c - 1) + 1e-9:
            raise SpecError(f"correlation {rho} not positive semi-definite for {c} channels")


@dataclass(frozen=True)
class BackgroundSpec:
    """Forecast-error surrogate: blur plus correlated noise, scaled by lead time.

    At lead_time hours the truth is blurred with a Gaussian of width
    smoothing_scale * (lead_time / 24) grid cells and perturbed by correlated
    noise of standard deviation noise_amplitude * (lead_time / 24), so error
    magnitude is non-decreasing in lead time and zero lead returns the truth.
    """

    lead_time: float = 24.0
    smoothing_scale: float = 1.5
    noise_amplitude: float = 0.35
    noise_correlation_length: float = 3.0

    def __post_init__(self):
        if self.lead_time < 0:
            raise SpecError("lead time must be non-negative")
        if self.smoothing_scale < 0 or self.noise_amplitude < 0 or self.noise_correlation_length < 0:
            raise SpecError("background spec parameters must be non-negative")


def _spectral_filter(shape: tuple[int, int], slope: float) -> np.ndarray:
    """Amplitude filter A(k) with A^2 ~ k^slope, zero DC, unit mean square."""
    h, w = shape
    kx = np.fft.fftfreq(h)  # cycles per grid cell
    ky = np.fft.fftfreq(w)
    kmag = np.sqrt(kx[:, None] ** 2 + ky[None, :] ** 2)
    amp = np.zeros(shape)
    nz = kmag > 0
    amp[nz] = kmag[nz] ** (slope / 2.0)
    amp /= np.sqrt(np.mean(amp**2))
    return amp


def _latitude_taper(grid: LatLonGrid) -> np.ndarray:
    """Mild polar damping, renormalized to unit mean square over the grid.

    Keeps the global sample variance equal to the spec amplitude while
    de-emphasizing the nonphysical latitude wrap of torus synthesis.
    """
    c = np.cos(np.deg2rad(grid.latitudes))
    w = np.sqrt((c + 3.0) / 4.0)
    w /= np.sqrt(np.mean(w**2))
    return w[:, None]


def _correlation_mixer(n_channels: int, rho: float) -> np.ndarray:
    """Cholesky factor of the uniform-correlation matrix (1-rho) I + rho 11^T."""
    if n_channels == 1 or rho == 0.0:
        return np.eye(n_channels)
    corr = np.full((n_channels, n_channels), rho)
    np.fill_diagonal(corr, 1.0)
    return np.linalg.cholesky(corr)


def generate_truth(spec: FieldSpec, grid: LatLonGrid, seed: int) -> Field:
    """Zero-mean Gaussian random field per channel, deterministic given seed."""
    rng = np.random.default_rng(seed)
    c = len(spec.channels)
    h, w = grid.shape
    white = rng.standard_normal((c, h, w))
    mixed = np.einsum("ij,jhw->ihw", _correlation_mixer(c, spec.cross_channel_corr), white)
    amp = _spectral_filter((h, w), spec.spectral_slope)
    out = np.fft.ifft2(np.fft.fft2(mixed, axes=(1, 2)) * amp[None], axes=(1, 2)).real
    out *= _latitude_taper(grid)[None]
    out -= out.mean(axis=(1, 2), keepdims=True)  # taper reintroduces a tiny mean
    out *= np.asarray(spec.amplitude)[:, None, None]
    return Field(grid, out.astype(np.float32), spec.channels)


def _correlated_noise(shape, corr_length: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise with Gaussian spatial correlation, per channel."""
    noise = rng.standard_normal(shape)
    if corr_length > 0:
        noise = gaussian_filter(noise, sigma=(0, corr_length, corr_length),
                                mode=("constant", "reflect", "wrap"))
    std = noise.std(axis=(1, 2), keepdims=True)
    std[std == 0] = 1.0
    return noise / std


def generate_background(truth: Field, spec: BackgroundSpec, seed: int) -> Field:
    """Blur-plus-noise forecast surrogate at the given lead time."""
    scale = spec.lead_time / 24.0
    if scale == 0.0:
        return truth.copy()
    values = truth.values.astype(np.float64)
    sigma = spec.smoothing_scale * scale
    if sigma > 0:
        values = gaussian_filter(values, sigma=(0, sigma, sigma),
                                 mode=("constant", "reflect", "wrap"))
    amp = spec.noise_amplitude * scale
    if amp > 0:
        rng = np.random.default_rng(seed)
        values = values + amp * _correlated_noise(values.shape, spec.noise_correlation_length, rng)
    return Field(truth.grid, values.astype(np.float32), truth.channels)


# ---------------------------------------------------------------------------
# Dataset manifests


@dataclass
class SampleEntry:
    sample_id: int
    truth_path: str
    background_path: str
    lead_time: float
    seed: int


@dataclass
class DatasetManifest:
    """File listing per sample plus train/val/test splits by seed ranges."""

    root: str
    samples: list[SampleEntry]
    splits: dict[str, list[int]]

    def split_entries(self, split: str) -> list[SampleEntry]:
        by_id = {s.sample_id: s for s in self.samples}
        return [by_id[i] for i in self.splits[split]]


def generate_dataset(
    grid: LatLonGrid,
    field_spec: FieldSpec,
    background_spec: BackgroundSpec,
    n_train: int,
    n_val: int,
    n_test: int,
    base_seed: int,
    out_dir,
) -> DatasetManifest:
    """Write truth/background pairs and a manifest; deterministic given base_seed.

    Sample i uses seed base_seed + i; splits are contiguous seed ranges
    (train, then val, then test), so the held-out sets never share seeds with
    training.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n_total = n_train + n_val + n_test
    samples = []
    for i in range(n_total):
        seed = base_seed + i
        truth = generate_truth(field_spec, grid, seed)
        background = generate_background(truth, background_spec, seed=seed + 7_000_003)
        tp = out / f"truth_{i:05d}.fnpf"
        bp = out / f"background_{i:05d}.fnpf"
        fileio.write_field(truth, tp)
        fileio.write_field(background, bp)
        samples.append(SampleEntry(i, tp.name, bp.name, background_spec.lead_time, seed))
    splits = {
        "train": list(range(n_train)),
        "val": list(range(n_train, n_train + n_val)),
        "test": list(range(n_train + n_val, n_total)),
    }
    manifest = DatasetManifest(str(out), samples, splits)
    write_manifest(manifest, out / "manifest.json")
    return manifest


def write_manifest(manifest: DatasetManifest, path) -> None:
    doc = {
        "samples": [
            {
                "id": s.sample_id,
                "truth": s.truth_path,
                "background": s.background_path,
                "lead_time_h": s.lead_time,
                "seed": s.seed,
            }
            for s in manifest.samples
        ],
        "splits": manifest.splits,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    samples = [
        SampleEntry(d["id"], d["truth"], d["background"], d["lead_time_h"], d["seed"])
        for d in doc["samples"]
    ]
    return DatasetManifest(str(path.parent), samples, {k: list(v) for k, v in doc["splits"].items()})


def load_sample(manifest: DatasetManifest, entry: SampleEntry) -> tuple[Field, Field]:
    root = Path(manifest.root)
    return (
        fileio.read_field(root / entry.truth_path),
        fileio.read_field(root / entry.background_path),
    )
