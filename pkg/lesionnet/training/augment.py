"""Geometric and photometric augmentation for image/mask pairs.

Geometric transforms hit the image and every mask channel with the same
parameters; masks are resampled nearest-neighbour so they stay binary.
Photometric jitter touches the image only and is clamped back to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import torch
import torchvision.transforms.functional as TF
from torchvision.transforms import InterpolationMode

from lesionnet.helpers.run_config import AugmentConfig


@dataclass(frozen=True)
class AugmentParams:
    angle: float = 0.0
    # (top, left, height, width) in pixels; None keeps the full image
    crop: Optional[Tuple[int, int, int, int]] = None
    hflip: bool = False
    vflip: bool = False
    brightness: float = 1.0
    saturation: float = 1.0
    contrast: float = 1.0

    @property
    def is_identity(self) -> bool:
        return self == AugmentParams()


IDENTITY = AugmentParams()


def sample_params(rng: np.random.Generator, side: int, config: Optional[AugmentConfig] = None) -> AugmentParams:
    config = config or AugmentConfig()
    if not config.enabled:
        return IDENTITY

    deg = config.rotation_degrees
    angle = float(rng.uniform(-deg, deg)) if deg > 0 else 0.0

    scale = float(rng.uniform(*config.crop_scale))
    crop_side = min(side, max(1, int(round(scale * side))))
    top = int(rng.integers(0, side - crop_side + 1))
    left = int(rng.integers(0, side - crop_side + 1))
    crop = None if crop_side == side else (top, left, crop_side, crop_side)

    return AugmentParams(
        angle=angle,
        crop=crop,
        hflip=bool(rng.random() < config.flip_prob),
        vflip=bool(rng.random() < config.flip_prob),
        brightness=float(rng.uniform(*config.brightness)),
        saturation=float(rng.uniform(*config.saturation)),
        contrast=float(rng.uniform(*config.contrast)),
    )


def _rotate(image: torch.Tensor, masks: torch.Tensor, angle: float):
    quarter = angle / 90.0
    if quarter == int(quarter):
        # Exact pixel permutation, counter-clockwise like TF.rotate.
        k = int(quarter) % 4
        return torch.rot90(image, k, dims=(-2, -1)), torch.rot90(masks, k, dims=(-2, -1))
    image = TF.rotate(image, angle, interpolation=InterpolationMode.BILINEAR, fill=0.0)
    masks = TF.rotate(masks, angle, interpolation=InterpolationMode.NEAREST, fill=0.0)
    return image, masks


def apply_augment(image: torch.Tensor, masks: torch.Tensor, params: AugmentParams):
    """Apply ``params`` to a channels-first ``(3, s, s)`` image and ``(m, s, s)`` masks."""
    if params.is_identity:
        return image, masks

    side = image.shape[-1]
    mask_dtype = masks.dtype
    masks = masks.to(image.dtype)

    if params.angle:
        image, masks = _rotate(image, masks, params.angle)

    if params.crop is not None:
        top, left, height, width = params.crop
        image = TF.resized_crop(image, top, left, height, width, [side, side],
                                interpolation=InterpolationMode.BILINEAR, antialias=True)
        masks = TF.resized_crop(masks, top, left, height, width, [side, side],
                                interpolation=InterpolationMode.NEAREST)

    if params.hflip:
        image, masks = TF.hflip(image), TF.hflip(masks)
    if params.vflip:
        image, masks = TF.vflip(image), TF.vflip(masks)

    if params.brightness != 1.0:
        image = TF.adjust_brightness(image, params.brightness)
    if params.saturation != 1.0:
        image = TF.adjust_saturation(image, params.saturation)
    if params.contrast != 1.0:
        image = TF.adjust_contrast(image, params.contrast)

    image = image.clamp(0.0, 1.0)
    masks = (masks > 0.5).to(mask_dtype)
    return image, masks


def augment(image: torch.Tensor, masks: torch.Tensor, rng: np.random.Generator,
            config: Optional[AugmentConfig] = None):
    params = sample_params(rng, image.shape[-1], config)
    return apply_augment(image, masks, params)
