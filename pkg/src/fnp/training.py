"""Training loop, checkpointing, and the shared model-assembly helpers."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np
import torch

from .config import ConfigError, ExperimentConfig, config_from_dict, config_to_dict
from .data import AssimilationDataset, channel_infos, compute_stats, derive_seed, ensure_dataset
from .decoder import gaussian_nll
from .metrics import ChannelStats
from .models import ModelSettings, build_variant

CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite loss or values during optimization (exit code 3 at the CLI)."""


def model_settings(cfg: ExperimentConfig) -> ModelSettings:
    m1, m2 = cfg.resolved_modes()
    return ModelSettings(
        channels=channel_infos(cfg),
        embed_dim=cfg.embed_dim,
        n_layers=cfg.n_layers,
        modes_lat=m1,
        modes_lon=m2,
        decoder_hidden=cfg.decoder_hidden,
        variance_floor=cfg.variance_floor,
        init_length_scale=cfg.setconv_init_scale,
        shared_encoder=cfg.shared_encoder,
        dam_retain=cfg.dam_retain,
        dam_selection=cfg.dam_selection,
        dam_soft_tau=cfg.dam_soft_tau,
        smoother_kernel_size=cfg.smoother_kernel_size,
        act_position=cfg.nfl_act_position,
    )


def build_model(cfg: ExperimentConfig) -> torch.nn.Module:
    return build_variant(cfg.variant, model_settings(cfg), seed=derive_seed(cfg.seed, "init"))


@dataclass
class TrainedModel:
    """In-memory bundle equivalent to a checkpoint file."""

    model: torch.nn.Module
    stats: ChannelStats
    config: ExperimentConfig
    curve: dict[str, list[float]]


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size].tolist()


def _dataset_nll(model, dataset, cfg: ExperimentConfig, batch_size: int) -> float:
    model.eval()
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            idx = list(range(start, min(start + batch_size, len(dataset))))
            batch, truth = dataset.batch(idx, drop_background=cfg.drop_background)
            mean, var = model(batch)
            total += float(gaussian_nll(mean, var, truth)) * len(idx)
            count += len(idx)
    return total / max(count, 1)


def fit(model, train_set, val_set, cfg: ExperimentConfig,
        epochs: int | None = None, stage: str = "train") -> dict[str, list[float]]:
    """AdamW optimization of the Gaussian NLL with per-epoch validation.

    The best-validation parameters are restored into ``model`` on return.
    Raises NumericError on non-finite loss.
    """
    epochs = cfg.epochs if epochs is None else epochs
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate,
                            weight_decay=cfg.weight_decay)
    curve = {"train_nll": [], "val_nll": []}
    best_val = _dataset_nll(model, val_set, cfg, cfg.batch_size) if len(val_set) else float("inf")
    best_state = copy.deepcopy(model.state_dict())
    curve["val_nll"].append(best_val)
    for epoch in range(epochs):
        rng = np.random.default_rng(derive_seed(cfg.seed, stage, "shuffle", epoch))
        model.train()
        running, seen = 0.0, 0
        for indices in _epoch_batches(len(train_set), cfg.batch_size, rng):
            batch, truth = train_set.batch(indices, drop_background=cfg.drop_background)
            opt.zero_grad()
            mean, var = model(batch)
            loss = gaussian_nll(mean, var, truth)
            if not torch.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} ({stage}); "
                    f"last finite train NLL {running / max(seen, 1):.4f}"
                )
            loss.backward()
            if cfg.grad_clip_norm > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            opt.step()
            running += loss.item() * len(indices)
            seen += len(indices)
        curve["train_nll"].append(running / max(seen, 1))
        if len(val_set):
            val = _dataset_nll(model, val_set, cfg, cfg.batch_size)
            curve["val_nll"].append(val)
            if val < best_val:
                best_val = val
                best_state = copy.deepcopy(model.state_dict())
    if len(val_set):
        model.load_state_dict(best_state)
    return curve


def train(cfg: ExperimentConfig) -> TrainedModel:
    """End-to-end: dataset, stats, model, optimization; deterministic per seed."""
    manifest = ensure_dataset(cfg)
    stats = compute_stats(manifest)
    torch.manual_seed(derive_seed(cfg.seed, "torch"))
    model = build_model(cfg)
    train_set = AssimilationDataset(cfg, manifest, "train", stats)
    val_set = AssimilationDataset(cfg, manifest, "val", stats)
    curve = fit(model, train_set, val_set, cfg)
    return TrainedModel(model, stats, cfg, curve)


def save_checkpoint(bundle: TrainedModel, path) -> None:
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "state_dict": bundle.model.state_dict(),
        "stats_mean": torch.from_numpy(bundle.stats.mean.copy()),
        "stats_std": torch.from_numpy(bundle.stats.std.copy()),
        "config": config_to_dict(bundle.config),
        "curve": bundle.curve,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> TrainedModel:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from exc
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigError(
            f"checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    cfg = config_from_dict(payload["config"])
    model = build_model(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    stats = ChannelStats(payload["stats_mean"].numpy(), payload["stats_std"].numpy())
    return TrainedModel(model, stats, cfg, dict(payload["curve"]))
