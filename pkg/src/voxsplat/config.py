"""Structured JSON configuration with one section per subsystem.

Every default matches the published training setup where one is stated:
0.1 m / 0.4 m voxel pair (factor 4), 102.4 m chunks, 64 depth bins over
0.1-90 m with 32 feature channels, 4 Gaussians per voxel confined to three
voxel sizes, a 1024 x 2048 sky panorama, and the loss weights
(1.0, 0.9, 1.0, 0.1, 0.6).  Unknown keys are rejected at load time.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union


@dataclass
class GridConfig:
    voxel_size: float = 0.1
    coarse_factor: int = 4
    origin: tuple = (0.0, 0.0, 0.0)


@dataclass
class DepthBinConfig:
    z_near: float = 0.1
    z_far: float = 90.0
    count: int = 64


@dataclass
class ConditioningConfig:
    feature_channels: int = 32
    extent: tuple = (256, 256, 256)


@dataclass
class GaussianConfig:
    per_voxel: int = 4
    range_factor: float = 3.0  # confinement radius r = range_factor * voxel_size


@dataclass
class RenderConfig:
    tile_size: int = 16
    z_clip: float = 0.01
    cov_regularizer: float = 0.3
    cutoff_sigma: float = 3.0


@dataclass
class SkyConfig:
    height: int = 1024
    width: int = 2048
    channels: int = 3
    uncovered_value: float = 0.5


@dataclass
class LidarConfig:
    elevation_count: int = 64
    azimuth_count: int = 900
    elevation_range_deg: tuple = (-25.0, 5.0)
    max_range: float = 90.0
    lam_hit: float = 2.0


@dataclass
class PipelineConfig:
    chunk_side: float = 102.4
    chunk_height: float = 102.4
    forward_fraction: float = 0.75
    height_floor: float = -10.0
    samples_per_box: int = 600


@dataclass
class LossConfig:
    depth: float = 1.0
    l1: float = 0.9
    mask: float = 1.0
    ssim: float = 0.1
    lpips: float = 0.6
    focal_gamma: float = 2.0


@dataclass
class Config:
    grid: GridConfig = field(default_factory=GridConfig)
    depth_bins: DepthBinConfig = field(default_factory=DepthBinConfig)
    conditioning: ConditioningConfig = field(default_factory=ConditioningConfig)
    gaussians: GaussianConfig = field(default_factory=GaussianConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    sky: SkyConfig = field(default_factory=SkyConfig)
    lidar: LidarConfig = field(default_factory=LidarConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    loss: LossConfig = field(default_factory=LossConfig)


class ConfigError(ValueError):
    pass


def _apply(section, values: dict, path: str):
    names = {f.name: f for f in dataclasses.fields(section)}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown config key {path}.{key}")
        current = getattr(section, key)
        if isinstance(current, tuple):
            value = tuple(value)
        elif isinstance(current, (int, float)) and not isinstance(current, bool):
            if not isinstance(value, (int, float)):
                raise ConfigError(f"config key {path}.{key} must be numeric")
            value = type(current)(value)
        setattr(section, key, value)


def config_from_dict(data: dict) -> Config:
    cfg = Config()
    sections = {f.name: f for f in dataclasses.fields(cfg)}
    for key, values in data.items():
        if key not in sections:
            raise ConfigError(f"unknown config section {key!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {key!r} must be an object")
        _apply(getattr(cfg, key), values, key)
    _validate(cfg)
    return cfg


def load_config(path: Union[str, Path, None]) -> Config:
    if path is None:
        cfg = Config()
        _validate(cfg)
        return cfg
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)


def _validate(cfg: Config) -> None:
    if cfg.grid.voxel_size <= 0:
        raise ConfigError("grid.voxel_size must be > 0")
    if cfg.grid.coarse_factor < 1:
        raise ConfigError("grid.coarse_factor must be >= 1")
    if not 0 <= cfg.depth_bins.z_near < cfg.depth_bins.z_far:
        raise ConfigError("depth_bins must satisfy 0 <= z_near < z_far")
    if cfg.depth_bins.count < 1:
        raise ConfigError("depth_bins.count must be >= 1")
    if cfg.gaussians.per_voxel < 1:
        raise ConfigError("gaussians.per_voxel must be >= 1")
    if cfg.gaussians.range_factor <= 0:
        raise ConfigError("gaussians.range_factor must be > 0")
    if not 0 < cfg.pipeline.forward_fraction < 1:
        raise ConfigError("pipeline.forward_fraction must be in (0, 1)")
    if cfg.lidar.max_range <= 0 or cfg.lidar.lam_hit <= 0:
        raise ConfigError("lidar.max_range and lidar.lam_hit must be > 0")
    if min(cfg.sky.height, cfg.sky.width, cfg.sky.channels) < 1:
        raise ConfigError("sky panorama dimensions must be >= 1")
    for name in ("depth", "l1", "mask", "ssim", "lpips"):
        if getattr(cfg.loss, name) < 0:
            raise ConfigError(f"loss.{name} must be >= 0")
