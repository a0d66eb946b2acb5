"""YAML run configuration.

Config files are plain YAML merged over :data:`DEFAULTS`, then turned into
typed dataclasses.  The default file may be swapped with the
``LESIONNET_CONFIG`` environment variable.
"""

import copy
import dataclasses
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import yaml

from lesionnet.core_types import ConfigError, VOCABULARY
from lesionnet.lesions import LESIONS, NUM_GRADES

log = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parents[2] / "config" / "segment.yml"
CONFIG_ENV = "LESIONNET_CONFIG"

VARIANTS = (2, 4, 8, 16, 32)
BACKBONE_KINDS = ("reference", "resnet18", "resnet50")
RESNET_CHANNELS = {
    "resnet18": (64, 64, 128, 256, 512),
    "resnet50": (64, 256, 512, 1024, 2048),
}
ACTIVATIONS = ("relu", "silu", "elu")
TASKS = ("segment", "grade")
GRADING_MODES = ("multitask", "baseline", "lesion_concat")
ATTENTION_MODES = ("conv", "cw_maxpool", "identity")
DOWNSAMPLE_MODES = ("max", "bilinear")
SEG_LOSSES = ("dual", "dice", "wce", "focal")
DTYPES = ("float32", "float64")


def _fail(key: str, message: str) -> None:
    raise ConfigError(f"{key}: {message}", key=key)


def _positive(key: str, value: Any) -> None:
    if not isinstance(value, (int, float)) or isinstance(value, bool) or value <= 0:
        _fail(key, f"must be positive, got {value!r}")


def _as_float(key: str, value: Any) -> float:
    if isinstance(value, bool):
        _fail(key, f"must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        _fail(key, f"must be a number, got {value!r}")


def _range_pair(key: str, value: Any, low: float = 0.0) -> None:
    if len(value) != 2 or not low <= value[0] <= value[1]:
        _fail(key, f"must be an ordered pair >= {low}, got {list(value)!r}")


# --- Model configs ---
@dataclass
class BackboneConfig:
    kind: str = "reference"
    stage_channels: Tuple[int, ...] = (16, 32, 64, 128, 256)
    activation: str = "relu"
    norm: bool = False

    def __post_init__(self):
        self.stage_channels = tuple(self.stage_channels)
        if self.kind not in BACKBONE_KINDS:
            _fail("backbone.kind", f"must be one of {BACKBONE_KINDS}, got {self.kind!r}")
        if len(self.stage_channels) != 5:
            _fail("backbone.stage_channels", "exactly 5 stages are required")
        for c in self.stage_channels:
            if not isinstance(c, int) or c <= 0:
                _fail("backbone.stage_channels", f"channels must be positive integers, got {c!r}")
        if self.activation not in ACTIVATIONS:
            _fail("backbone.activation", f"must be one of {ACTIVATIONS}")

    @property
    def channels(self) -> Tuple[int, ...]:
        return RESNET_CHANNELS.get(self.kind, self.stage_channels)

    @property
    def final_channels(self) -> int:
        "k, the number of last feature maps."
        return self.channels[-1]


@dataclass
class LesionNetConfig:
    variant: int = 16
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    m: int = len(LESIONS)

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = _build(BackboneConfig, self.backbone, "lesion_net.backbone")
        if self.variant not in VARIANTS:
            _fail("lesion_net.variant", f"must be one of {VARIANTS}, got {self.variant!r}")
        _positive("lesion_net.m", self.m)

    @property
    def merge_steps(self) -> int:
        return int(round(math.log2(32 // self.variant)))


@dataclass
class MultiTaskConfig:
    mode: str = "multitask"
    attention: str = "conv"
    h_att: int = 64
    attention_activation: str = "relu"
    downsample: str = "max"
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    freeze_side: bool = True

    def __post_init__(self):
        if isinstance(self.backbone, dict):
            self.backbone = _build(BackboneConfig, self.backbone, "multitask.backbone")
        if self.mode not in GRADING_MODES:
            _fail("multitask.mode", f"must be one of {GRADING_MODES}")
        if self.attention not in ATTENTION_MODES:
            _fail("multitask.attention", f"must be one of {ATTENTION_MODES}")
        if self.downsample not in DOWNSAMPLE_MODES:
            _fail("multitask.downsample", f"must be one of {DOWNSAMPLE_MODES}")
        if self.attention_activation not in ACTIVATIONS:
            _fail("multitask.attention_activation", f"must be one of {ACTIVATIONS}")
        _positive("multitask.h_att", self.h_att)


@dataclass
class DualLossConfig:
    lam: float = 0.8
    eps: float = 1e-6

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            _fail("dual_lambda", f"must lie in [0, 1], got {self.lam}")
        _positive("eps", self.eps)


# --- Training configs ---
@dataclass
class TrainConfig:
    lr0: float = 0.001
    momentum: float = 0.95
    weight_decay: float = 0.0001
    validate_every: int = 1000
    lr_patience: int = 4
    stop_patience: int = 10
    lr_factor: float = 10.0
    batch_size: int = 8
    dual_lambda: float = 0.8
    seed: int = 0
    max_epochs: int = 50
    num_workers: int = 0
    loss: str = "dual"
    focal_alpha: float = 0.8
    focal_gamma: float = 2.0
    wce_cap: float = 100.0
    threshold: float = 0.5
    dtype: str = "float32"
    deterministic: bool = True
    cache_size: int = 256

    def __post_init__(self):
        for key in ("lr0", "momentum", "weight_decay", "lr_factor", "wce_cap", "dual_lambda",
                    "focal_alpha", "focal_gamma", "threshold"):
            # PyYAML reads "1e-3" as a string
            setattr(self, key, _as_float(f"train.{key}", getattr(self, key)))
        for key in ("lr0", "lr_factor", "wce_cap"):
            _positive(f"train.{key}", getattr(self, key))
        for key in ("momentum", "weight_decay"):
            if getattr(self, key) < 0:
                _fail(f"train.{key}", "must be >= 0")
        for key in ("validate_every", "lr_patience", "stop_patience", "batch_size", "max_epochs"):
            value = getattr(self, key)
            if not isinstance(value, int) or value <= 0:
                _fail(f"train.{key}", f"must be a positive integer, got {value!r}")
        if not isinstance(self.num_workers, int) or self.num_workers < 0:
            _fail("train.num_workers", "must be a non-negative integer")
        if not 0.0 <= self.dual_lambda <= 1.0:
            _fail("train.dual_lambda", f"must lie in [0, 1], got {self.dual_lambda}")
        if self.loss not in SEG_LOSSES:
            _fail("train.loss", f"must be one of {SEG_LOSSES}")
        if not 0.0 < self.focal_alpha < 1.0:
            _fail("train.focal_alpha", "must lie in (0, 1)")
        if self.focal_gamma < 0:
            _fail("train.focal_gamma", "must be >= 0")
        if not 0.0 < self.threshold < 1.0:
            _fail("train.threshold", "must lie in (0, 1)")
        if self.dtype not in DTYPES:
            _fail("train.dtype", f"must be one of {DTYPES}")
        if not isinstance(self.cache_size, int) or self.cache_size < 0:
            _fail("train.cache_size", "must be a non-negative integer")

    def dual(self) -> DualLossConfig:
        return DualLossConfig(lam=self.dual_lambda)


@dataclass
class AugmentConfig:
    enabled: bool = True
    rotation_degrees: float = 180.0
    crop_scale: Tuple[float, float] = (0.9, 1.0)
    flip_prob: float = 0.5
    brightness: Tuple[float, float] = (0.8, 1.2)
    saturation: Tuple[float, float] = (0.8, 1.2)
    contrast: Tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        for key in ("crop_scale", "brightness", "saturation", "contrast"):
            setattr(self, key, tuple(getattr(self, key)))
            _range_pair(f"augment.{key}", getattr(self, key))
        if not 0.0 < self.crop_scale[1] <= 1.0:
            _fail("augment.crop_scale", "upper bound must lie in (0, 1]")
        if self.crop_scale[0] <= 0.0:
            _fail("augment.crop_scale", "lower bound must be positive")
        if not 0.0 <= self.flip_prob <= 1.0:
            _fail("augment.flip_prob", "must lie in [0, 1]")
        if self.rotation_degrees < 0:
            _fail("augment.rotation_degrees", "must be >= 0")


# Blob counts and radii (pixels) are sized for 128x128 images.
SYNTH_BLOB_COUNTS = {
    "MA": (1, 6), "iHE": (1, 8), "HaEx": (1, 6), "CWS": (1, 3),
    "vHE": (1, 1), "pHE": (1, 2), "NV": (1, 2), "FiP": (1, 2),
}
SYNTH_RADII = {
    "MA": (1.0, 2.0), "iHE": (1.5, 3.0), "HaEx": (1.0, 2.5), "CWS": (2.5, 4.0),
    "vHE": (5.0, 8.0), "pHE": (3.0, 5.0), "NV": (2.5, 4.0), "FiP": (3.0, 5.0),
}
SYNTH_COLORS = {
    "MA": (0.75, 0.05, 0.05), "iHE": (0.35, 0.02, 0.02), "HaEx": (0.95, 0.9, 0.3),
    "CWS": (0.95, 0.95, 0.95), "vHE": (0.15, 0.0, 0.2), "pHE": (0.9, 0.25, 0.6),
    "NV": (0.1, 0.7, 0.2), "FiP": (0.3, 0.5, 0.95),
}


@dataclass
class SynthConfig:
    image_side: int = 128
    seed: int = 0
    blob_counts: Dict[str, Tuple[int, int]] = field(default_factory=lambda: dict(SYNTH_BLOB_COUNTS))
    radius_ranges: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(SYNTH_RADII))
    colors: Dict[str, Tuple[float, float, float]] = field(default_factory=lambda: dict(SYNTH_COLORS))
    grade_mix: Tuple[float, ...] = (0.2, 0.2, 0.2, 0.2, 0.2)
    severe_count_prob: float = 0.5
    field_color: Tuple[float, float, float] = (0.45, 0.2, 0.08)
    field_radius: float = 0.46
    noise_std: float = 0.02

    def __post_init__(self):
        if not isinstance(self.image_side, int) or self.image_side <= 0 or self.image_side % 32:
            _fail("synth.image_side", f"must be a positive multiple of 32, got {self.image_side!r}")
        self.blob_counts = {**SYNTH_BLOB_COUNTS, **{k: tuple(v) for k, v in self.blob_counts.items()}}
        self.radius_ranges = {**SYNTH_RADII, **{k: tuple(v) for k, v in self.radius_ranges.items()}}
        self.colors = {**SYNTH_COLORS, **{k: tuple(v) for k, v in self.colors.items()}}
        for table in ("blob_counts", "radius_ranges", "colors"):
            unknown = set(getattr(self, table)) - set(VOCABULARY)
            if unknown:
                _fail(f"synth.{table}", f"unknown lesions {sorted(unknown)}")
        for lesion, (lo, hi) in self.blob_counts.items():
            if not 1 <= lo <= hi:
                _fail(f"synth.blob_counts.{lesion}", "need 1 <= low <= high")
        for lesion, (lo, hi) in self.radius_ranges.items():
            if not 0 < lo <= hi:
                _fail(f"synth.radius_ranges.{lesion}", "radius range must be positive")
        self.grade_mix = tuple(float(p) for p in self.grade_mix)
        if len(self.grade_mix) != NUM_GRADES or min(self.grade_mix) < 0 or sum(self.grade_mix) <= 0:
            _fail("synth.grade_mix", f"needs {NUM_GRADES} non-negative proportions")
        self.field_color = tuple(self.field_color)
        if not 0.0 <= self.severe_count_prob <= 1.0:
            _fail("synth.severe_count_prob", "must lie in [0, 1]")


@dataclass
class RunConfig:
    task: str = "segment"
    manifest: Optional[str] = None
    output_dir: str = "runs/default"
    lesion_checkpoint: Optional[str] = None
    lesion_net: LesionNetConfig = field(default_factory=LesionNetConfig)
    multitask: MultiTaskConfig = field(default_factory=MultiTaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.task not in TASKS:
            _fail("task", f"must be one of {TASKS}, got {self.task!r}")

    def check_paths(self) -> None:
        """Referenced inputs must exist when a run starts."""
        if not self.manifest or not Path(self.manifest).is_file():
            _fail("manifest", f"dataset manifest not found: {self.manifest}")
        if self.task == "grade" and self.multitask.mode != "baseline":
            if not self.lesion_checkpoint or not Path(self.lesion_checkpoint).is_file():
                _fail("lesion_checkpoint", f"segmentation checkpoint not found: {self.lesion_checkpoint}")

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        data = dict(data)
        sections = {
            "lesion_net": LesionNetConfig,
            "multitask": MultiTaskConfig,
            "train": TrainConfig,
            "augment": AugmentConfig,
        }
        for key, section_cls in sections.items():
            if key in data and not isinstance(data[key], section_cls):
                data[key] = _build(section_cls, data[key] or {}, key)
        return _build(cls, data, "run")


def _plain(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _build(cls, data: Dict[str, Any], section: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}", key=section)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{section}: unknown keys {sorted(unknown)}", key=section)
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"{section}: {e}", key=section) from e


# --- Loading ---
def config_path() -> Path:
    "Default run config, read from the environment on every call."
    return Path(os.getenv(CONFIG_ENV) or DEFAULT_CONFIG_PATH)


DEFAULTS: Dict[str, Any] = RunConfig().to_dict()


def _merge(defaults: Dict[str, Any], loaded: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(defaults)
    for key, value in loaded.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return merged


def load_raw(path) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            loaded = yaml.safe_load(f) or {}
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}", key="config") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}", key="config") from e
    if not isinstance(loaded, dict):
        raise ConfigError(f"config {path} must hold a mapping", key="config")
    return loaded


def load_config(path=None) -> RunConfig:
    path = Path(path) if path is not None else config_path()
    loaded = load_raw(path)
    cfg = RunConfig.from_dict(_merge(DEFAULTS, loaded))
    log.info("Loaded run config from %s (task=%s)", path, cfg.task)
    return cfg


def load_synth_config(path=None, **overrides: Any) -> SynthConfig:
    loaded = load_raw(path) if path is not None else {}
    section = loaded.get("synth", loaded)
    return _build(SynthConfig, {**section, **overrides}, "synth")


def save_config(cfg: RunConfig, path) -> None:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(cfg.to_dict(), f, sort_keys=False)
