"""Evaluation, cross-resolution sweeps, ablations, and single-case assimilation."""
from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np
import torch

from .config import ExperimentConfig
from .data import AssimilationDataset, compute_stats, ensure_dataset
from .decoder import AnalysisDistribution
from .grids import Field, GridError, LatLonGrid, ObservationSet, make_equiangular_grid
from .metrics import ChannelStats, MetricsReport, latitude_weights
from .models import Batch, observation_reference_grid
from .training import TrainedModel, fit

EVAL_BATCH = 8


@dataclass
class CaseArrays:
    """Raw arrays of one example case, for report plots."""

    truth: np.ndarray
    background: np.ndarray
    analysis_mean: np.ndarray
    analysis_variance: np.ndarray
    channel_names: tuple[str, ...]


@dataclass
class EvaluationResult:
    analysis: MetricsReport
    background: MetricsReport
    example: CaseArrays


class _MetricAccumulator:
    """Pooled latitude-weighted squared error per channel + standardized MSE/MAE."""

    def __init__(self, grid: LatLonGrid, n_channels: int, stats: ChannelStats):
        self.weights = latitude_weights(grid)
        self.stats = stats
        self.sq = np.zeros(n_channels)
        self.z_sq = 0.0
        self.z_abs = 0.0
        self.n_fields = 0
        self.cells = grid.n_lat * grid.n_lon

    def add(self, estimate: np.ndarray, truth: np.ndarray) -> None:
        err = estimate.astype(np.float64) - truth.astype(np.float64)
        self.sq += (self.weights[None] * err**2).sum(axis=(1, 2))
        z = err / self.stats.std[:, None, None]
        self.z_sq += float((z**2).sum())
        self.z_abs += float(np.abs(z).sum())
        self.n_fields += 1

    def report(self, channel_names, metadata: dict) -> MetricsReport:
        denom = max(self.n_fields * self.cells, 1)
        rmse = {
            name: float(np.sqrt(self.sq[c] / denom))
            for c, name in enumerate(channel_names)
        }
        n_vals = max(self.n_fields * self.cells * len(channel_names), 1)
        return MetricsReport(
            mse=self.z_sq / n_vals,
            mae=self.z_abs / n_vals,
            rmse_per_channel=rmse,
            sample_count=self.n_fields,
            metadata=metadata,
        )


def _denormalize(mean: torch.Tensor, var: torch.Tensor, stats: ChannelStats):
    std = stats.std[None, :, None, None]
    mu = stats.mean[None, :, None, None]
    mean_p = mean.detach().cpu().numpy().astype(np.float64) * std + mu
    var_p = var.detach().cpu().numpy().astype(np.float64) * std**2
    return mean_p, var_p


def _metadata(cfg: ExperimentConfig, variant: str, fine_tuned: bool) -> dict:
    return {
        "experiment_id": cfg.experiment_id,
        "variant": variant,
        "obs_resolution_deg": cfg.obs_resolution_deg(),
        "ratio": cfg.obs_ratio,
        "lead_time_h": cfg.lead_time_h,
        "fine_tuned": fine_tuned,
        "seed": cfg.seed,
        "drop_background": cfg.drop_background,
    }


def evaluate(bundle: TrainedModel, eval_cfg: ExperimentConfig | None = None,
             split: str = "test", fine_tuned: bool = False) -> EvaluationResult:
    """Run assimilation over a split and report analysis vs background metrics.

    ``eval_cfg`` defaults to the training configuration; pass a modified copy
    to change the observation grid, ratio, lead time, or reconstruction mode.
    """
    cfg = eval_cfg or bundle.config
    if (cfg.channels, cfg.channel_groups) != (bundle.config.channels, bundle.config.channel_groups):
        raise GridError("evaluation channels do not match the checkpoint")
    manifest = ensure_dataset(cfg)
    dataset = AssimilationDataset(
        cfg, manifest, split, bundle.stats,
        obs_grid=make_equiangular_grid(cfg.obs_n_lat, cfg.obs_n_lon),
        obs_ratio=cfg.obs_ratio,
    )
    model = bundle.model
    model.eval()
    grid = dataset.target_grid
    names = cfg.channels
    acc_analysis = _MetricAccumulator(grid, len(names), bundle.stats)
    acc_background = _MetricAccumulator(grid, len(names), bundle.stats)
    example: CaseArrays | None = None
    with torch.no_grad():
        for start in range(0, len(dataset), EVAL_BATCH):
            idx = list(range(start, min(start + EVAL_BATCH, len(dataset))))
            batch, _ = dataset.batch(idx, drop_background=cfg.drop_background)
            mean, var = model(batch)
            mean_p, var_p = _denormalize(mean, var, bundle.stats)
            for j, i in enumerate(idx):
                pack = dataset[i]
                acc_analysis.add(mean_p[j], pack.truth.values)
                acc_background.add(pack.background.values, pack.truth.values)
                if example is None:
                    example = CaseArrays(
                        pack.truth.values.copy(), pack.background.values.copy(),
                        mean_p[j].copy(), var_p[j].copy(), names,
                    )
    return EvaluationResult(
        analysis=acc_analysis.report(names, _metadata(cfg, bundle.config.variant, fine_tuned)),
        background=acc_background.report(names, _metadata(cfg, "background", False)),
        example=example,
    )


def fine_tune(bundle: TrainedModel, eval_cfg: ExperimentConfig,
              epochs: int | None = None) -> TrainedModel:
    """Briefly continue training on the evaluation setting (copy; original kept)."""
    model = copy.deepcopy(bundle.model)
    manifest = ensure_dataset(eval_cfg)
    train_set = AssimilationDataset(
        eval_cfg, manifest, "train", bundle.stats,
        obs_grid=make_equiangular_grid(eval_cfg.obs_n_lat, eval_cfg.obs_n_lon),
    )
    val_set = AssimilationDataset(
        eval_cfg, manifest, "val", bundle.stats,
        obs_grid=make_equiangular_grid(eval_cfg.obs_n_lat, eval_cfg.obs_n_lon),
    )
    n_epochs = epochs if epochs is not None else eval_cfg.resolved_fine_tune_epochs()
    curve = fit(model, train_set, val_set, eval_cfg, epochs=n_epochs, stage="fine_tune")
    return TrainedModel(model, bundle.stats, bundle.config, curve)


def cross_resolution_eval(
    bundle: TrainedModel,
    resolutions: list[tuple[int, int]],
    do_fine_tune: bool,
) -> list[EvaluationResult]:
    """Evaluate at each observation grid size, optionally fine-tuning first."""
    results = []
    for n_lat, n_lon in resolutions:
        eval_cfg = replace(
            bundle.config,
            obs_n_lat=n_lat, obs_n_lon=n_lon,
            experiment_id=f"{bundle.config.experiment_id}_obs{n_lat}x{n_lon}"
                          + ("_ft" if do_fine_tune else ""),
        )
        active = fine_tune(bundle, eval_cfg) if do_fine_tune else bundle
        results.append(evaluate(active, eval_cfg, fine_tuned=do_fine_tune))
    return results


def ablate(cfg: ExperimentConfig,
           variants: tuple[str, ...] = ("fnp", "fnp_no_nfl", "fnp_no_dam", "fnp_no_svd"),
           settings_sweep: bool = True) -> list[EvaluationResult]:
    """Train/evaluate each variant under identical data and seeds; then sweep
    observation ratio and background lead time for the base variant."""
    from .training import train

    results = []
    for tag in variants:
        vcfg = replace(cfg, variant=tag, experiment_id=f"{cfg.experiment_id}_{tag}")
        results.append(evaluate(train(vcfg), vcfg))
    if settings_sweep:
        sweeps = []
        if cfg.obs_ratio != 0.01:
            sweeps.append(replace(cfg, obs_ratio=0.01,
                                  experiment_id=f"{cfg.experiment_id}_ratio1pct"))
        if cfg.lead_time_h != 48.0:
            sweeps.append(replace(cfg, lead_time_h=48.0,
                                  experiment_id=f"{cfg.experiment_id}_lead48h"))
        for scfg in sweeps:
            results.append(evaluate(train(scfg), scfg))
    return results


def assimilate_case(
    bundle: TrainedModel,
    background: Field | None,
    obs: ObservationSet,
    target_grid: LatLonGrid | None = None,
) -> tuple[AnalysisDistribution, LatLonGrid]:
    """One assimilation (or reconstruction, when background is None)."""
    cfg = bundle.config
    stats = bundle.stats
    if background is not None:
        if background.channel_names != cfg.channels:
            raise GridError("background channels do not match the checkpoint")
        grid = background.grid
        bg_values = torch.from_numpy(stats.normalize(background.values.astype(np.float64))).float()
    else:
        grid = target_grid or make_equiangular_grid(cfg.bg_n_lat, cfg.bg_n_lon)
        bg_values = torch.zeros((len(cfg.channels), grid.n_lat, grid.n_lon))
    if obs.n_channels != len(cfg.channels):
        raise GridError("observation channels do not match the checkpoint")
    obs_values = (obs.values.astype(np.float64) - stats.mean) / stats.std
    obs_norm = ObservationSet(obs.lats, obs.lons, obs_values.astype(np.float32),
                              obs.mask, obs.source_resolution)
    batch = Batch(
        background=bg_values.unsqueeze(0),
        bg_present=background is not None,
        obs=[obs_norm],
        target_grid=grid,
        obs_grid=observation_reference_grid(obs, grid),
    )
    bundle.model.eval()
    with torch.no_grad():
        mean, var = bundle.model(batch)
    mean_p, var_p = _denormalize(mean, var, stats)
    c = len(cfg.channels)
    dist = AnalysisDistribution(
        mean_p[0].reshape(c, -1), var_p[0].reshape(c, -1),
        variance_floor=cfg.variance_floor * float(stats.std.min()) ** 2,
    )
    return dist, grid
