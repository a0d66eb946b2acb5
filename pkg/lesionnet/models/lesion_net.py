"""Lesion-Net family.

The expansive path has ``log2(32 / X)`` merge steps.  Each step reduces the
current maps with a 1x1 conv to the skip's width, upsamples them x2
(bilinear, half-pixel centres) and concatenates the skip.  The head is a 1x1
conv to ``m`` channels followed by a sigmoid and a parameter-free x``X``
bilinear upsample back to the input size.
"""

from __future__ import annotations

import logging
from typing import Union

import torch
import torch.nn as nn
import torch.nn.functional as F

from lesionnet.core_types import CheckpointError, ConfigError, ShapeError, presence_from_maps
from lesionnet.helpers.checkpoint import load_checkpoint, restore_state
from lesionnet.helpers.run_config import LesionNetConfig, RunConfig
from lesionnet.models.backbone import build_backbone, check_side

log = logging.getLogger(__name__)


def upsample(x: torch.Tensor, size) -> torch.Tensor:
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class MergeStep(nn.Module):
    def __init__(self, in_channels: int, skip_channels: int):
        super().__init__()
        self.reduce = nn.Conv2d(in_channels, skip_channels, kernel_size=1)

    def forward(self, current: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        h, w = current.shape[-2:]
        if tuple(skip.shape[-2:]) != (2 * h, 2 * w):
            raise ShapeError(
                f"skip must be twice the current side: current {h}x{w}, skip {tuple(skip.shape[-2:])}"
            )
        if skip.shape[-3] != self.reduce.out_channels:
            raise ShapeError(f"skip has {skip.shape[-3]} channels, step expects {self.reduce.out_channels}")
        x = upsample(self.reduce(current), skip.shape[-2:])
        return torch.cat([x, skip], dim=1)


def merge_step(step: MergeStep, current: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
    """Apply one merge step; accepts batched or single ``(C, h, w)`` maps."""
    if current.dim() == 3 and skip.dim() == 3:
        return step(current.unsqueeze(0), skip.unsqueeze(0))[0]
    return step(current, skip)


class LesionNet(nn.Module):
    def __init__(self, config: LesionNetConfig):
        super().__init__()
        self.config = config
        self.variant = config.variant
        self.m = config.m
        self.backbone = build_backbone(config.backbone)
        channels = self.backbone.channels

        width = channels[-1]
        steps = []
        for i in range(config.merge_steps):
            skip_channels = channels[3 - i]
            steps.append(MergeStep(width, skip_channels))
            width = 2 * skip_channels
        self.merges = nn.ModuleList(steps)
        self.head = nn.Conv2d(width, config.m, kernel_size=1)

    def coarse_maps(self, x: torch.Tensor) -> torch.Tensor:
        """Sigmoid maps at stride X, before the final upsample."""
        pyramid = self.backbone(x)
        current = pyramid[-1]
        for i, step in enumerate(self.merges):
            current = step(current, pyramid[3 - i])
        return torch.sigmoid(self.head(current))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return upsample(self.coarse_maps(x), x.shape[-2:])


def build_lesion_net(config: Union[LesionNetConfig, dict, None] = None) -> LesionNet:
    if config is None:
        config = LesionNetConfig()
    elif isinstance(config, dict):
        config = LesionNetConfig(**config)
    net = LesionNet(config)
    log.debug("Built Lesion-Net-%ds with %d merge steps", config.variant, config.merge_steps)
    return net


def lesion_net_forward(net: LesionNet, image: torch.Tensor) -> torch.Tensor:
    """Probability maps ``(m, s, s)`` for one image or ``(N, m, s, s)`` for a batch."""
    check_side(image)
    if image.dim() == 3:
        return net(image.unsqueeze(0))[0]
    return net(image)


def classify_lesions(net: LesionNet, image: torch.Tensor) -> torch.Tensor:
    """Image-level presence by global max pooling of the full-size maps."""
    return presence_from_maps(lesion_net_forward(net, image))


def load_lesion_net(path) -> LesionNet:
    """Rebuild a Lesion-Net from a ``lesion_net`` checkpoint."""
    payload = load_checkpoint(path, expected_kind="lesion_net")
    try:
        config = RunConfig.from_dict(payload["config"]).lesion_net
    except (ConfigError, KeyError) as e:
        raise CheckpointError(f"{path}: stored config is unusable ({e})") from e
    net = build_lesion_net(config)
    net.to(next(iter(payload["state_dict"].values())).dtype)
    restore_state(net, payload)
    net.eval()
    return net
