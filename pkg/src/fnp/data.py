"""Dataset assembly for training and evaluation.

Every stochastic component draws from a named sub-seed derived from the
experiment seed (sha256 over the seed and component name), so ensembles and
repeated runs are reproducible bit-for-bit.  Observation sets are sampled once
per (sample, experiment) and cached in memory across epochs.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig
from .grids import ChannelInfo, Field, LatLonGrid, ObservationSet, make_equiangular_grid, sample_observations
from .metrics import ChannelStats
from .models import Batch
from .synthetic import BackgroundSpec, DatasetManifest, FieldSpec, generate_dataset, load_sample, read_manifest


def derive_seed(root: int, *names) -> int:
    """Stable named sub-seed (independent of Python hash randomization)."""
    text = ":".join([str(root), *map(str, names)])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") % (2**63)


def channel_infos(cfg: ExperimentConfig) -> tuple[ChannelInfo, ...]:
    return tuple(ChannelInfo(n, g) for n, g in zip(cfg.channels, cfg.channel_groups))


def field_spec(cfg: ExperimentConfig) -> FieldSpec:
    return FieldSpec(channel_infos(cfg), cfg.spectral_slope, cfg.amplitudes, cfg.cross_channel_corr)


def background_spec(cfg: ExperimentConfig, lead_time_h: float | None = None) -> BackgroundSpec:
    return BackgroundSpec(
        cfg.lead_time_h if lead_time_h is None else lead_time_h,
        cfg.bg_smoothing_scale, cfg.bg_noise_amplitude, cfg.bg_noise_corr_length,
    )


def dataset_dir(cfg: ExperimentConfig, lead_time_h: float | None = None) -> Path:
    """Deterministic per-parameterization dataset location (reused if present)."""
    lead = cfg.lead_time_h if lead_time_h is None else lead_time_h
    tag = (
        f"ds_{cfg.bg_n_lat}x{cfg.bg_n_lon}_c{len(cfg.channels)}"
        f"_s{cfg.spectral_slope:g}_r{cfg.cross_channel_corr:g}"
        f"_lt{lead:g}_n{cfg.n_train}-{cfg.n_val}-{cfg.n_test}_seed{cfg.data_seed}"
    )
    return cfg.resolved_data_dir() / tag


def ensure_dataset(cfg: ExperimentConfig, lead_time_h: float | None = None) -> DatasetManifest:
    """Generate (or reuse) the synthetic dataset this configuration names."""
    out = dataset_dir(cfg, lead_time_h)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        return read_manifest(manifest_path)
    grid = make_equiangular_grid(cfg.bg_n_lat, cfg.bg_n_lon)
    return generate_dataset(
        grid, field_spec(cfg), background_spec(cfg, lead_time_h),
        cfg.n_train, cfg.n_val, cfg.n_test, cfg.data_seed, out,
    )


def compute_stats(manifest: DatasetManifest, split: str = "train") -> ChannelStats:
    """Per-channel mean/std over the split's truth fields."""
    total = None
    total_sq = None
    count = 0
    for entry in manifest.split_entries(split):
        truth, _ = load_sample(manifest, entry)
        v = truth.values.astype(np.float64)
        if total is None:
            total = v.sum(axis=(1, 2))
            total_sq = (v**2).sum(axis=(1, 2))
        else:
            total += v.sum(axis=(1, 2))
            total_sq += (v**2).sum(axis=(1, 2))
        count += v.shape[1] * v.shape[2]
    mean = total / count
    var = total_sq / count - mean**2
    return ChannelStats(mean, np.sqrt(np.maximum(var, 1e-12)))


@dataclass
class SamplePack:
    """One assimilation case: normalized tensors plus the raw truth field."""

    truth: Field
    background: Field
    truth_norm: torch.Tensor
    background_norm: torch.Tensor
    obs_norm: ObservationSet


class AssimilationDataset:
    """Materialized split with deterministic per-sample observation draws."""

    def __init__(self, cfg: ExperimentConfig, manifest: DatasetManifest,
                 split: str, stats: ChannelStats,
                 obs_grid: LatLonGrid | None = None, obs_ratio: float | None = None):
        self.cfg = cfg
        self.manifest = manifest
        self.split = split
        self.stats = stats
        self.entries = manifest.split_entries(split)
        self.obs_grid = obs_grid or make_equiangular_grid(cfg.obs_n_lat, cfg.obs_n_lon)
        self.obs_ratio = cfg.obs_ratio if obs_ratio is None else obs_ratio
        self.target_grid = make_equiangular_grid(cfg.bg_n_lat, cfg.bg_n_lon)
        self._cache: dict[int, SamplePack] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def _normalize_field(self, field: Field) -> torch.Tensor:
        return torch.from_numpy(self.stats.normalize(field.values.astype(np.float64))).float()

    def _normalize_obs(self, obs: ObservationSet) -> ObservationSet:
        values = (obs.values.astype(np.float64) - self.stats.mean) / self.stats.std
        return ObservationSet(obs.lats, obs.lons, values.astype(np.float32),
                              obs.mask, obs.source_resolution)

    def __getitem__(self, i: int) -> SamplePack:
        pack = self._cache.get(i)
        if pack is None:
            entry = self.entries[i]
            truth, background = load_sample(self.manifest, entry)
            obs_seed = derive_seed(
                self.cfg.seed, "obs", self.split, entry.sample_id,
                self.obs_grid.n_lat, self.obs_grid.n_lon, self.obs_ratio,
            )
            obs = sample_observations(truth, self.obs_grid, self.obs_ratio, obs_seed)
            pack = SamplePack(
                truth, background,
                self._normalize_field(truth), self._normalize_field(background),
                self._normalize_obs(obs),
            )
            self._cache[i] = pack
        return pack

    def batch(self, indices, drop_background: bool = False) -> tuple[Batch, torch.Tensor]:
        packs = [self[i] for i in indices]
        background = torch.stack([p.background_norm for p in packs])
        truth = torch.stack([p.truth_norm for p in packs])
        batch = Batch(
            background=background,
            bg_present=not drop_background,
            obs=[p.obs_norm for p in packs],
            target_grid=self.target_grid,
            obs_grid=self.obs_grid,
        )
        return batch, truth
