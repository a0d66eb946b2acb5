"""Contracting path: five feature stages at strides /2, /4, /8, /16, /32.

``reference`` is a small conv stack sized for desk-scale training.  The
torchvision ResNets (untrained) are drop-in replacements honouring the same
stride contract; ``resnet50`` ends in k = 2048 channels.
"""

from __future__ import annotations

import logging
from typing import Tuple, Union

import torch
import torch.nn as nn
from torchvision.models import resnet18, resnet50
from torchvision.models.feature_extraction import create_feature_extractor

from lesionnet.core_types import ShapeError
from lesionnet.helpers.run_config import BackboneConfig

log = logging.getLogger(__name__)

STRIDE = 32
FeaturePyramid = Tuple[torch.Tensor, ...]

_ACTIVATIONS = {
    "relu": nn.ReLU,
    "silu": nn.SiLU,
    "elu": nn.ELU,
}

# torchvision node -> stride
_RESNET_NODES = {"relu": "s2", "layer1": "s4", "layer2": "s8", "layer3": "s16", "layer4": "s32"}


def make_activation(name: str) -> nn.Module:
    return _ACTIVATIONS[name]()


def check_side(image: torch.Tensor) -> None:
    if image.dim() not in (3, 4):
        raise ShapeError(f"expected (3, s, s) or (N, 3, s, s) input, got {tuple(image.shape)}")
    h, w = image.shape[-2:]
    if h % STRIDE or w % STRIDE or h == 0 or w == 0:
        raise ShapeError(f"image side must be a positive multiple of {STRIDE}, got {h}x{w}")


class ReferenceBackbone(nn.Module):
    """Each stage: stride-2 3x3 conv, activation, 3x3 conv, activation."""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.channels = tuple(config.stage_channels)
        stages = []
        in_channels = 3
        for out_channels in self.channels:
            layers = [nn.Conv2d(in_channels, out_channels, 3, stride=2, padding=1)]
            if config.norm:
                layers.append(nn.BatchNorm2d(out_channels))
            layers.append(make_activation(config.activation))
            layers.append(nn.Conv2d(out_channels, out_channels, 3, padding=1))
            if config.norm:
                layers.append(nn.BatchNorm2d(out_channels))
            layers.append(make_activation(config.activation))
            stages.append(nn.Sequential(*layers))
            in_channels = out_channels
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        pyramid = []
        for stage in self.stages:
            x = stage(x)
            pyramid.append(x)
        return tuple(pyramid)


class TorchvisionBackbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        factory = {"resnet18": resnet18, "resnet50": resnet50}[config.kind]
        # No pretrained weights.
        self.body = create_feature_extractor(factory(weights=None), return_nodes=_RESNET_NODES)
        self.channels = config.channels

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        out = self.body(x)
        return tuple(out[name] for name in _RESNET_NODES.values())


def build_backbone(config: Union[BackboneConfig, dict, None] = None) -> nn.Module:
    if config is None:
        config = BackboneConfig()
    elif isinstance(config, dict):
        config = BackboneConfig(**config)
    if config.kind == "reference":
        return ReferenceBackbone(config)
    return TorchvisionBackbone(config)


def backbone_forward(image: torch.Tensor, backbone: Union[nn.Module, BackboneConfig]) -> FeaturePyramid:
    """Run the contracting path; a single ``(3, s, s)`` image gives unbatched stages."""
    check_side(image)
    if isinstance(backbone, BackboneConfig):
        backbone = build_backbone(backbone)
    single = image.dim() == 3
    pyramid = backbone(image.unsqueeze(0) if single else image)
    return tuple(stage[0] for stage in pyramid) if single else pyramid


def param_count(model: nn.Module) -> int:
    """Number of trainable scalars."""
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
