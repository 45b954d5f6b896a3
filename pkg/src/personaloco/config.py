"""TOML-backed configuration with the desk-scale preset.

Full-scale defaults follow the published training setup (token 256, 4
layers, batch 2048, lr 1e-4); `desk` shrinks the model to token 64 / ff 128
/ 2 layers and the batch to 64 so the whole pipeline runs on a laptop CPU.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .denoiser import DenoiserConfig


@dataclass
class DiffConfig:
    T: int = 4
    beta_min: float = 0.1
    beta_max: float = 0.95
    gamma: float = 0.7
    blend_M: int = 5


@dataclass
class AugConfig:
    sigma_beta1: float = 0.2
    sigma_beta_rest: float = 0.5
    eq3_orientation: str = "corrected"  # corrected | paper


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 2048
    lr: float = 1e-4
    window_stride: int = 5
    p_drop_past: float = 0.15
    p_drop_text: float = 0.0
    prior_cache: int = 64
    log_every: int = 100


@dataclass
class FinetuneConfig:
    steps: int = 400
    lr: float = 1e-5
    prior_ratio: float = 1.0  # prior pairs per example pair in a batch
    batch_size: int = 16


@dataclass
class RuntimeConfig:
    fps: float = 30.0
    walk_speed: float = 1.2
    sprint_speed: float = 3.0
    spring_halflife_s: float = 0.25
    overlap_mode: bool = False  # generate every 22 frames, discard tail


@dataclass
class ContactConfig:
    height_thresh: float = 0.05
    speed_thresh: float = 0.1


@dataclass
class Config:
    model: DenoiserConfig = field(default_factory=DenoiserConfig)
    diff: DiffConfig = field(default_factory=DiffConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    ft: FinetuneConfig = field(default_factory=FinetuneConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    contact: ContactConfig = field(default_factory=ContactConfig)

    def to_dict(self) -> dict:
        return asdict(self)


def desk_config() -> Config:
    cfg = Config()
    cfg.model = DenoiserConfig.desk_scale()
    cfg.train.batch_size = 64
    # synthetic corpus gaits walk at 0.3..0.8 m/s; keep command speeds inside
    cfg.runtime.walk_speed = 0.6
    cfg.runtime.sprint_speed = 0.8
    # overfit-scale shape noise: full Eq.-2 sigmas assume a 50-subject corpus
    cfg.aug.sigma_beta1 = 0.03
    cfg.aug.sigma_beta_rest = 0.06
    return cfg


def _apply(section_obj, values: dict, section_name: str) -> None:
    known = {f.name for f in fields(section_obj)}
    for k, v in values.items():
        if k not in known:
            raise ValueError(f"unknown config key {section_name}.{k}")
        setattr(section_obj, k, v)


def load_config(path: str | Path | None) -> Config:
    """Load TOML config; `preset = "desk"` selects the desk-scale baseline."""
    if path is None:
        return Config()
    with open(path, "rb") as f:
        doc = tomllib.load(f)
    cfg = desk_config() if doc.pop("preset", None) == "desk" else Config()
    for section, values in doc.items():
        if not hasattr(cfg, section):
            raise ValueError(f"unknown config section {section!r}")
        _apply(getattr(cfg, section), values, section)
    return cfg
