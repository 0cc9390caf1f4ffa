"""Experiment configuration: a flat key/value text format, one key per field.

Lines are ``key = value``; blank lines and ``#`` comments are ignored.
Unknown keys, malformed values, and out-of-range fields raise ConfigError
(exit code 2 at the CLI).  Paths resolve against ``data_dir``, which itself
defaults to the FNP_DATA_DIR environment variable, then ``./fnp_data``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .models import VARIANT_TAGS


class ConfigError(ValueError):
    """Invalid configuration file or field value."""


@dataclass
class ExperimentConfig:
    # identity
    experiment_id: str = "exp"
    variant: str = "fnp"
    seed: int = 0

    # grids and data
    bg_n_lat: int = 32
    bg_n_lon: int = 64
    obs_n_lat: int = 32
    obs_n_lon: int = 64
    obs_ratio: float = 0.1
    lead_time_h: float = 24.0
    channels: tuple[str, ...] = ("z500", "t2m", "u10", "v10")
    channel_groups: tuple[int, ...] = (0, 1, 1, 1)
    amplitudes: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    spectral_slope: float = -2.5
    cross_channel_corr: float = 0.3
    bg_smoothing_scale: float = 1.5
    bg_noise_amplitude: float = 0.35
    bg_noise_corr_length: float = 3.0
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    data_seed: int = 90210

    # model (paper-defaults where stated: embedding 128, four Fourier layers)
    embed_dim: int = 128
    n_layers: int = 4
    modes_lat: int = 0  # 0 resolves to bg_n_lat // 4
    modes_lon: int = 0  # 0 resolves to bg_n_lon // 4
    decoder_hidden: tuple[int, ...] = (64, 64)
    variance_floor: float = 1e-6
    setconv_init_scale: float = 2.0
    shared_encoder: bool = False
    dam_retain: str = "verbatim"
    dam_selection: str = "hard"
    dam_soft_tau: float = 0.1
    smoother_kernel_size: int = 3
    nfl_act_position: str = "pre_residual"

    # training (paper-defaults where stated: 20 epochs, AdamW, lr 1e-4, batch 16)
    epochs: int = 20
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 16
    grad_clip_norm: float = 1.0  # 0 disables clipping
    fine_tune: bool = False
    fine_tune_epochs: int = 0  # 0 resolves to max(1, epochs // 5)
    drop_background: bool = False

    # paths
    data_dir: str = ""
    checkpoint_path: str = ""
    report_dir: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        c = len(self.channels)
        if c == 0:
            raise ConfigError("at least one channel required")
        if len(self.channel_groups) != c or len(self.amplitudes) != c:
            raise ConfigError("channels, channel_groups, amplitudes must have equal length")
        if self.variant not in VARIANT_TAGS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANT_TAGS}")
        if not 0.0 <= self.obs_ratio <= 1.0:
            raise ConfigError("obs_ratio must lie in [0, 1]")
        if min(self.bg_n_lat, self.bg_n_lon, self.obs_n_lat, self.obs_n_lon) < 1:
            raise ConfigError("grid sizes must be positive")
        if self.lead_time_h < 0:
            raise ConfigError("lead_time_h must be non-negative")
        if self.epochs < 0 or self.fine_tune_epochs < 0:
            raise ConfigError("epoch counts must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1:
            raise ConfigError("learning_rate must be positive and batch_size >= 1")
        if min(self.n_train, self.n_val, self.n_test) < 0 or self.n_train + self.n_val + self.n_test == 0:
            raise ConfigError("dataset sizes must be non-negative and not all zero")
        if self.embed_dim < 1 or self.n_layers < 0:
            raise ConfigError("embed_dim must be >= 1 and n_layers >= 0")
        if self.variance_floor <= 0:
            raise ConfigError("variance_floor must be positive")
        if self.dam_retain not in ("verbatim", "prose"):
            raise ConfigError("dam_retain must be 'verbatim' or 'prose'")
        if self.dam_selection not in ("hard", "soft"):
            raise ConfigError("dam_selection must be 'hard' or 'soft'")
        if self.nfl_act_position not in ("pre_residual", "post_residual"):
            raise ConfigError("nfl_act_position must be 'pre_residual' or 'post_residual'")
        if self.smoother_kernel_size % 2 == 0:
            raise ConfigError("smoother_kernel_size must be odd")

    # --- resolved values -------------------------------------------------

    def resolved_modes(self) -> tuple[int, int]:
        m1 = self.modes_lat or max(1, self.bg_n_lat // 4)
        m2 = self.modes_lon or max(1, self.bg_n_lon // 4)
        return m1, m2

    def resolved_fine_tune_epochs(self) -> int:
        return self.fine_tune_epochs or max(1, self.epochs // 5)

    def resolved_data_dir(self) -> Path:
        root = self.data_dir or os.environ.get("FNP_DATA_DIR", "") or "fnp_data"
        return Path(root)

    def resolved_checkpoint_path(self) -> Path:
        if self.checkpoint_path:
            return Path(self.checkpoint_path)
        return self.resolved_data_dir() / f"{self.experiment_id}.ckpt"

    def resolved_report_dir(self) -> Path:
        return Path(self.report_dir) if self.report_dir else self.resolved_data_dir() / "reports"

    def obs_resolution_deg(self) -> float:
        return 180.0 / self.obs_n_lat


_LIST_FIELDS = {"channels": str, "channel_groups": int, "amplitudes": float,
                "decoder_hidden": int}


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if name in _LIST_FIELDS:
            item = _LIST_FIELDS[name]
            return tuple(item(p.strip()) for p in raw.split(",") if p.strip() != "")
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse value {raw!r} for key {name!r}") from exc


def config_from_dict(pairs: dict) -> ExperimentConfig:
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    kwargs = {}
    for key, raw in pairs.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        default = fields[key].default
        if isinstance(raw, str):
            kwargs[key] = _coerce(key, raw, type(default))
        elif isinstance(default, tuple):
            kwargs[key] = tuple(raw)
        else:
            kwargs[key] = raw
    return ExperimentConfig(**kwargs)


def parse_config_file(path) -> ExperimentConfig:
    pairs: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in pairs:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return config_from_dict(pairs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        out[f.name] = list(v) if isinstance(v, tuple) else v
    return out


def write_config_file(cfg: ExperimentConfig, path) -> None:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
