"""DR grading networks.

``GradingNet`` has three modes sharing the main branch (own backbone, GAP,
fully connected k x 5, softmax):

* ``baseline``       plain classifier on the last feature maps
* ``multitask``      last feature maps re-weighted by side-attention maps
                     computed from a frozen Lesion-Net
* ``lesion_concat``  GAP features concatenated with the Lesion-Net presence
                     vector before the classifier
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from lesionnet.core_types import CheckpointError, ConfigError, InvalidInputError, ShapeError, presence_from_maps
from lesionnet.helpers.checkpoint import load_checkpoint, restore_state
from lesionnet.helpers.run_config import MultiTaskConfig, RunConfig
from lesionnet.lesions import NUM_GRADES
from lesionnet.models.backbone import build_backbone, check_side, make_activation
from lesionnet.models.lesion_net import LesionNet

log = logging.getLogger(__name__)

SideLike = Union[int, Tuple[int, int]]


def downsample_maps(maps: torch.Tensor, target_side: SideLike, mode: str = "max") -> torch.Tensor:
    """Shrink ``(..., m, H, W)`` maps to ``target_side``.

    ``max`` pools with kernel == stride == H / target; ``bilinear`` is the
    interpolation alternative.
    """
    th, tw = (target_side, target_side) if isinstance(target_side, int) else tuple(target_side)
    h, w = maps.shape[-2:]
    if th <= 0 or tw <= 0 or h % th or w % tw or h // th != w // tw:
        raise ShapeError(f"cannot downsample {h}x{w} maps to {th}x{tw}")
    factor = h // th
    if factor == 1:
        return maps
    single = maps.dim() == 3
    x = maps.unsqueeze(0) if single else maps
    if mode == "max":
        x = F.max_pool2d(x, kernel_size=factor, stride=factor)
    elif mode == "bilinear":
        x = F.interpolate(x, size=(th, tw), mode="bilinear", align_corners=False)
    else:
        raise InvalidInputError(f"unknown downsample mode {mode!r}")
    return x[0] if single else x


def cw_maxpool_weights(maps: torch.Tensor, k: int) -> torch.Tensor:
    """One map ``max_j s_j`` repeated over ``k`` channels."""
    w = maps.amax(dim=-3, keepdim=True)
    shape = list(w.shape)
    shape[-3] = k
    return w.expand(*shape)


class ConvAttention(nn.Module):
    """3x3 conv (m -> h_att), activation, 3x3 conv (h_att -> k), sigmoid."""

    def __init__(self, m: int, k: int, h_att: int = 64, activation: str = "relu"):
        super().__init__()
        self.conv1 = nn.Conv2d(m, h_att, 3, padding=1)
        self.act = make_activation(activation)
        self.conv2 = nn.Conv2d(h_att, k, 3, padding=1)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.conv2(self.act(self.conv1(maps))))


def conv_attention_weights(maps: torch.Tensor, attention: ConvAttention) -> torch.Tensor:
    if maps.dim() == 3:
        return attention(maps.unsqueeze(0))[0]
    return attention(maps)


def lesion_concat_forward(features: torch.Tensor, presence: torch.Tensor, fc: nn.Linear) -> torch.Tensor:
    """``softmax(fc([GAP(features), presence]))``.

    ``features`` may be the last feature maps ``(N, k, h, w)`` or already
    pooled ``(N, k)``.
    """
    pooled = features.mean(dim=(-2, -1)) if features.dim() == 4 else features
    if presence.dim() == 1:
        presence = presence.unsqueeze(0)
    if pooled.shape[0] != presence.shape[0]:
        raise InvalidInputError(f"batch mismatch: {pooled.shape[0]} feature rows, {presence.shape[0]} presence rows")
    if pooled.shape[1] + presence.shape[1] != fc.in_features:
        raise InvalidInputError(
            f"head expects {fc.in_features} inputs, got k={pooled.shape[1]} + m={presence.shape[1]}"
        )
    return F.softmax(fc(torch.cat([pooled, presence.to(pooled.dtype)], dim=1)), dim=1)


@dataclass
class GradingOutput:
    probabilities: torch.Tensor            # (N, 5)
    maps: Optional[torch.Tensor] = None    # (N, m, s, s)
    presence: Optional[torch.Tensor] = None


class GradingNet(nn.Module):
    def __init__(self, config: MultiTaskConfig, lesion_net: Optional[LesionNet] = None):
        super().__init__()
        self.config = config
        self.mode = config.mode
        self.attention_mode = config.attention
        self.backbone = build_backbone(config.backbone)
        self.k = self.backbone.channels[-1]

        if self.mode == "baseline":
            self.lesion_net = None
        else:
            if lesion_net is None:
                raise InvalidInputError(f"{self.mode} grading needs a Lesion-Net side branch")
            self.lesion_net = lesion_net
            if config.freeze_side:
                self.lesion_net.requires_grad_(False)
                self.lesion_net.eval()

        self.m = self.lesion_net.m if self.lesion_net is not None else 0
        self.attention = None
        if self.mode == "multitask" and self.attention_mode == "conv":
            self.attention = ConvAttention(self.m, self.k, config.h_att, config.attention_activation)

        in_features = self.k + self.m if self.mode == "lesion_concat" else self.k
        self.fc = nn.Linear(in_features, NUM_GRADES)

    def train(self, mode: bool = True):
        super().train(mode)
        if self.lesion_net is not None and self.config.freeze_side:
            self.lesion_net.eval()
        return self

    def side_parameters(self):
        return [] if self.lesion_net is None else list(self.lesion_net.parameters())

    def main_parameters(self):
        side = {id(p) for p in self.side_parameters()}
        return [p for p in self.parameters() if id(p) not in side and p.requires_grad]

    def lesion_maps(self, x: torch.Tensor) -> torch.Tensor:
        with torch.set_grad_enabled(torch.is_grad_enabled() and not self.config.freeze_side):
            return self.lesion_net(x)

    def attention_weights(self, maps: torch.Tensor, features: torch.Tensor) -> torch.Tensor:
        if self.attention_mode == "identity":
            return torch.ones_like(features)
        small = downsample_maps(maps, tuple(features.shape[-2:]), self.config.downsample)
        if self.attention_mode == "cw_maxpool":
            return cw_maxpool_weights(small, self.k)
        return conv_attention_weights(small, self.attention)

    def grade_features(self, features: torch.Tensor, weights: Optional[torch.Tensor] = None) -> torch.Tensor:
        "Fusion, GAP, FC and softmax on the last feature maps."
        fused = features if weights is None else features * weights
        return F.softmax(self.fc(fused.mean(dim=(-2, -1))), dim=1)

    def forward(self, x: torch.Tensor) -> GradingOutput:
        features = self.backbone(x)[-1]
        if self.mode == "baseline":
            return GradingOutput(self.grade_features(features))

        maps = self.lesion_maps(x)
        presence = presence_from_maps(maps)
        if self.mode == "lesion_concat":
            probs = lesion_concat_forward(features, presence, self.fc)
        else:
            probs = self.grade_features(features, self.attention_weights(maps, features))
        return GradingOutput(probs, maps, presence)


def build_grading_net(config: Optional[MultiTaskConfig] = None,
                      lesion_net: Optional[LesionNet] = None) -> GradingNet:
    net = GradingNet(config or MultiTaskConfig(), lesion_net)
    log.debug("Built grading net: mode=%s attention=%s k=%d", net.mode, net.attention_mode, net.k)
    return net


def fuse_and_grade(net: GradingNet, image: torch.Tensor):
    """One forward pass -> ``(grade probabilities, lesion maps, presence)``.

    A single ``(3, s, s)`` image gives unbatched outputs.  ``maps`` and
    ``presence`` are None for the baseline mode.
    """
    check_side(image)
    single = image.dim() == 3
    out = net(image.unsqueeze(0) if single else image)
    if not single:
        return out.probabilities, out.maps, out.presence

    def first(t):
        return None if t is None else t[0]

    return out.probabilities[0], first(out.maps), first(out.presence)


def predict_grade(probabilities) -> Union[int, np.ndarray]:
    """Argmax; ties go to the lower grade. Batched input gives an array."""
    if isinstance(probabilities, torch.Tensor):
        probabilities = probabilities.detach().cpu().numpy()
    probs = np.asarray(probabilities)
    if probs.shape[-1] != NUM_GRADES:
        raise InvalidInputError(f"expected {NUM_GRADES} grade probabilities, got {probs.shape}")
    # numpy argmax returns the first maximum
    grades = np.argmax(probs, axis=-1)
    return int(grades) if probs.ndim == 1 else grades.astype(np.int64)


def load_grading_net(path) -> GradingNet:
    """Rebuild a grading net (and its Lesion-Net branch) from a ``grading`` checkpoint."""
    payload = load_checkpoint(path, expected_kind="grading")
    try:
        config = RunConfig.from_dict(payload["config"])
    except (ConfigError, KeyError) as e:
        raise CheckpointError(f"{path}: stored config is unusable ({e})") from e
    lesion_net = None if config.multitask.mode == "baseline" else LesionNet(config.lesion_net)
    net = build_grading_net(config.multitask, lesion_net)
    net.to(next(iter(payload["state_dict"].values())).dtype)
    restore_state(net, payload)
    net.eval()
    return net
