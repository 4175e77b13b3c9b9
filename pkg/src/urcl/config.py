"""Experiment configuration and its flat key = value file format.

Unknown keys are rejected so stale config files fail loudly. The serialized
form round-trips losslessly through ``write_config``/``parse_config``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .exceptions import ConfigError

STRATEGIES = ("urcl", "one_fit_all", "finetune")


@dataclass
class ExperimentConfig:
    data_dir: str = ""
    strategy: str = "urcl"
    seed: int = 0

    # windowing / stream layout
    input_steps: int = 12          # M
    output_steps: int = 1          # N
    base_fraction: float = 0.3
    n_incremental: int = 4

    # optimization
    batch_size: int = 32
    epochs: int = 100
    patience: int = 15
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    grad_clip: float = 5.0

    # replay / mixup / contrastive
    buffer_capacity: int = 256
    mixup_alpha: float = 0.5
    tau: float = 0.5
    ssl_weight: float = 1.0
    pool_size: int = 0             # 0 -> 4 * batch_size
    sample_size: int = 0           # 0 -> batch_size

    # model
    diffusion_steps: int = 2       # K
    embed_dim: int = 10
    dilations: tuple[int, ...] = (1, 2, 1, 2, 4)

    # augmentation
    dn_ratio: float = 0.1
    de_ratio: float = 0.1
    de_threshold: float = -1.0     # < 0 -> 10th percentile of positive edge weights
    sg_coverage: float = 0.8
    ae_ratio: float = 0.05
    ae_min_hops: int = 3
    ts_slice_len: int = 0          # 0 -> input_steps // 2

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        positive = {
            "input_steps": self.input_steps, "output_steps": self.output_steps,
            "batch_size": self.batch_size, "epochs": self.epochs,
            "patience": self.patience, "learning_rate": self.learning_rate,
            "mixup_alpha": self.mixup_alpha, "tau": self.tau,
            "n_incremental": self.n_incremental, "embed_dim": self.embed_dim,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0 < self.base_fraction < 1:
            raise ConfigError(f"base_fraction must be in (0, 1), got {self.base_fraction}")
        if self.buffer_capacity < 0 or self.pool_size < 0 or self.sample_size < 0:
            raise ConfigError("capacity and sampling sizes must be >= 0")
        if self.ssl_weight < 0:
            raise ConfigError(f"ssl_weight must be >= 0, got {self.ssl_weight}")
        if self.diffusion_steps < 0:
            raise ConfigError(f"diffusion_steps must be >= 0, got {self.diffusion_steps}")
        if isinstance(self.dilations, str):
            raise ConfigError("dilations must be a sequence of ints")
        self.dilations = tuple(int(d) for d in self.dilations)

    @property
    def effective_pool_size(self) -> int:
        return self.pool_size if self.pool_size > 0 else 4 * self.batch_size

    @property
    def effective_sample_size(self) -> int:
        return self.sample_size if self.sample_size > 0 else self.batch_size

    @property
    def effective_slice_len(self) -> int:
        return self.ts_slice_len if self.ts_slice_len > 0 else max(2, self.input_steps // 2)


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_value(text: str, target_type, key: str):
    text = text.strip()
    try:
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        if target_type is str:
            return text
        # remaining field is the dilation tuple
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"cannot parse value {text!r} for key {key!r}") from None


def write_config(cfg: ExperimentConfig, path: str | Path) -> None:
    lines = [f"{f.name} = {_format_value(getattr(cfg, f.name))}" for f in fields(cfg)]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_config(path: str | Path) -> ExperimentConfig:
    defaults = ExperimentConfig()
    known = {f.name for f in fields(ExperimentConfig)}
    overrides = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in overrides:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        overrides[key] = _parse_value(value, type(getattr(defaults, key)), key)
    return ExperimentConfig(**overrides)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = "\n".join(
        f"{f.name}={_format_value(getattr(cfg, f.name))}" for f in fields(cfg)
    )
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]
