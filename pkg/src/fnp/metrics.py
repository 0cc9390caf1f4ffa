"""Evaluation metrics: latitude-weighted RMSE and standardized MSE / MAE.

The per-channel RMSE weights each grid point by H * cos(lat) normalized per
longitude column, so the weights sum to H * W over the grid.  Overall MSE and
MAE are unweighted means over channels and grid points of standardized errors
(z-scored per channel by training-set statistics when provided), since
cross-variable aggregates are only meaningful on normalized channels.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .grids import Field, GridError, LatLonGrid


@dataclass
class ChannelStats:
    """Per-channel normalization statistics (training-set mean and spread)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if (self.std <= 0).any():
            raise GridError("channel standard deviations must be positive")

    @classmethod
    def identity(cls, n_channels: int) -> "ChannelStats":
        return cls(np.zeros(n_channels), np.ones(n_channels))

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean[:, None, None]) / self.std[:, None, None]


@dataclass
class MetricsReport:
    """Aggregated evaluation metrics with experiment metadata."""

    mse: float
    mae: float
    rmse_per_channel: dict[str, float]
    sample_count: int
    metadata: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        vals = [self.mse, self.mae, *self.rmse_per_channel.values()]
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise GridError("metrics must be finite and non-negative")


def latitude_weights(grid: LatLonGrid) -> np.ndarray:
    """Column-normalized cosine-latitude weights, shaped (H, 1), summing to H."""
    cos = np.cos(np.deg2rad(grid.latitudes))
    if (cos <= 0).any():
        raise GridError("latitude weights require strictly positive cos(lat)")
    w = grid.n_lat * cos / cos.sum()
    return w[:, None]


def _check_compatible(estimate: Field, truth: Field) -> None:
    if estimate.grid != truth.grid:
        raise GridError("estimate and truth grids differ")
    if estimate.channel_names != truth.channel_names:
        raise GridError("estimate and truth channels differ")


def latitude_weighted_rmse(estimate: Field, truth: Field, channel: int) -> float:
    """Latitude-weighted root mean square error of one channel."""
    _check_compatible(estimate, truth)
    err = estimate.values[channel].astype(np.float64) - truth.values[channel].astype(np.float64)
    w = latitude_weights(estimate.grid)
    return float(np.sqrt(np.mean(w * err**2)))


def overall_mse(estimate: Field, truth: Field, stats: ChannelStats | None = None) -> float:
    """Unweighted mean squared standardized error over channels and grid."""
    _check_compatible(estimate, truth)
    stats = stats or ChannelStats.identity(truth.n_channels)
    err = stats.normalize(estimate.values.astype(np.float64)) - stats.normalize(
        truth.values.astype(np.float64)
    )
    return float(np.mean(err**2))


def overall_mae(estimate: Field, truth: Field, stats: ChannelStats | None = None) -> float:
    """Unweighted mean absolute standardized error over channels and grid."""
    _check_compatible(estimate, truth)
    stats = stats or ChannelStats.identity(truth.n_channels)
    err = stats.normalize(estimate.values.astype(np.float64)) - stats.normalize(
        truth.values.astype(np.float64)
    )
    return float(np.mean(np.abs(err)))


CSV_COLUMNS = [
    "experiment_id", "variant", "obs_resolution_deg", "ratio", "lead_time_h",
    "fine_tuned", "channel", "rmse", "mse", "mae", "seed",
]


def report_rows(report: MetricsReport) -> list[dict]:
    """Flatten a report into one CSV row per channel (overall metrics repeated)."""
    meta = report.metadata
    return [
        {
            "experiment_id": meta.get("experiment_id", ""),
            "variant": meta.get("variant", ""),
            "obs_resolution_deg": meta.get("obs_resolution_deg", ""),
            "ratio": meta.get("ratio", ""),
            "lead_time_h": meta.get("lead_time_h", ""),
            "fine_tuned": meta.get("fine_tuned", False),
            "channel": name,
            "rmse": rmse,
            "mse": report.mse,
            "mae": report.mae,
            "seed": meta.get("seed", ""),
        }
        for name, rmse in report.rmse_per_channel.items()
    ]


def write_csv(reports: list[MetricsReport], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for rep in reports:
            for row in report_rows(rep):
                writer.writerow(row)


def write_summary_json(reports: list[MetricsReport], path) -> None:
    doc = [
        {
            "mse": r.mse,
            "mae": r.mae,
            "rmse_per_channel": r.rmse_per_channel,
            "sample_count": r.sample_count,
            "metadata": r.metadata,
        }
        for r in reports
    ]
    Path(path).write_text(json.dumps(doc, indent=1), encoding="utf-8")


def read_summary_json(path) -> list[MetricsReport]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        MetricsReport(d["mse"], d["mae"], d["rmse_per_channel"], d["sample_count"], d["metadata"])
        for d in doc
    ]
