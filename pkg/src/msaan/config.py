"""Flat run configuration: defaults < preset < config file < command-line flags.

Config files are plain ``key = value`` lines; ``#`` starts a comment. Keys are
the field names of :class:`RunConfig`.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ContractError
from .model import ModelConfig
from .optim import TrainConfig

# Reference settings for the light and standard sizes; "tiny" is a desk-scale preset.
PRESET_VALUES = {
    "tiny": dict(n_blocks=4, channels=20, lr_max=1e-3, patch_size=32),
    "light": dict(n_blocks=12, channels=40, lr_max=1e-3, patch_size=64),
    "standard": dict(n_blocks=24, channels=60, lr_max=3e-4, patch_size=48),
}


@dataclass
class RunConfig:
    preset: str = "tiny"
    # model
    n_blocks: int = 4
    channels: int = 20
    scale: int = 2
    use_leb: bool = True
    use_gfm: bool = True
    use_mfa: bool = True
    use_fg: bool = True
    figff_expansion: int = 2
    # optimisation (step count and batch size are desk-scale choices)
    lr_max: float = 1e-3
    lr_min: float = 1e-7
    total_steps: int = 2000
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    fft_weight: float = 0.05
    patch_size: int = 32
    batch_size: int = 8
    seed: int = 0
    augment: bool = True
    # bookkeeping
    log_every: int = 10
    ckpt_every: int = 0
    prefetch: int = 0
    train_dir: str = ""
    val_dir: str = ""
    out_dir: str = "runs/latest"
    checkpoint: str = ""

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_blocks=self.n_blocks, channels=self.channels, scale=self.scale,
                           use_leb=self.use_leb, use_gfm=self.use_gfm, use_mfa=self.use_mfa,
                           use_fg=self.use_fg, figff_expansion=self.figff_expansion)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def echo(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in dataclasses.asdict(self).items())


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ContractError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ContractError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def resolve(file_values: dict | None = None, flag_values: dict | None = None) -> RunConfig:
    """Merge layers; the preset is picked from the highest layer naming one."""
    file_values, flag_values = dict(file_values or {}), dict(flag_values or {})
    preset = flag_values.get("preset", file_values.get("preset", RunConfig.preset))
    if preset not in PRESET_VALUES:
        raise ContractError(f"unknown preset {preset!r}; choose from {sorted(PRESET_VALUES)}")
    merged = {"preset": preset, **PRESET_VALUES[preset], **file_values, **flag_values}
    cfg = RunConfig(**merged)
    cfg.model_config()
    cfg.train_config()
    return cfg


def load_config_file(path) -> dict:
    return parse_config_text(Path(path).read_text())
