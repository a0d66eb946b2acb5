"""Segmentation, lesion classification and grading losses.

Inputs are probabilities (not logits).  Dice terms sum over every element of
the batch; the log-based losses clamp probabilities to ``[1e-7, 1 - 1e-7]``.
"""

from __future__ import annotations

import logging
from typing import Optional

import torch

from lesionnet.core_types import ConfigError, InvalidInputError, ShapeError, presence_from_maps
from lesionnet.helpers.run_config import DualLossConfig, TrainConfig

log = logging.getLogger(__name__)

EPS_CLAMP = 1e-7
DICE_EPS = 1e-6
ROW_SUM_TOL = 1e-6


def _same_shape(p: torch.Tensor, t: torch.Tensor) -> None:
    if p.shape != t.shape:
        raise ShapeError(f"prediction {tuple(p.shape)} and target {tuple(t.shape)} differ")


def _dice(p: torch.Tensor, t: torch.Tensor, eps: float) -> torch.Tensor:
    t = t.to(p.dtype)
    inter = (p * t).sum()
    return 1.0 - (2.0 * inter + eps) / ((p * p).sum() + (t * t).sum() + eps)


def dice_seg_loss(p: torch.Tensor, t: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Pixel-level Dice loss over the whole batch."""
    _same_shape(p, t)
    return _dice(p, t, eps)


def dice_clf_loss(P: torch.Tensor, T: torch.Tensor, eps: float = DICE_EPS) -> torch.Tensor:
    """Image-level Dice loss over presence vectors ``(N, m)``."""
    _same_shape(P, T)
    return _dice(P, T, eps)


def dual_loss(p: torch.Tensor, t: torch.Tensor, config: Optional[DualLossConfig] = None) -> torch.Tensor:
    """``lam * dice_seg + (1 - lam) * dice_clf`` with presences from global max pooling."""
    config = config or DualLossConfig()
    _same_shape(p, t)
    seg = dice_seg_loss(p, t, config.eps)
    clf = dice_clf_loss(presence_from_maps(p), presence_from_maps(t).to(p.dtype), config.eps)
    return config.lam * seg + (1.0 - config.lam) * clf


def _channel_view(weights: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    "Shape per-lesion weights to broadcast along the channel axis of ``p``."
    if p.dim() >= 3:
        m = p.shape[-3]
        shape = (m, 1, 1)
    else:
        m = p.shape[-1]
        shape = (m,)
    if weights.numel() != m:
        raise ShapeError(f"need {m} lesion weights, got {weights.numel()}")
    return weights.reshape(shape)


def weighted_cross_entropy(p: torch.Tensor, t: torch.Tensor, weights, eps: float = EPS_CLAMP) -> torch.Tensor:
    """Binary cross-entropy with a per-lesion weight on the positive term."""
    _same_shape(p, t)
    weights = torch.as_tensor(weights, dtype=p.dtype, device=p.device)
    if (weights <= 0).any():
        raise ConfigError("WCE weights must be positive", key="weights")
    w = _channel_view(weights, p)
    t = t.to(p.dtype)
    pc = p.clamp(eps, 1.0 - eps)
    return -(w * t * torch.log(pc) + (1.0 - t) * torch.log(1.0 - pc)).mean()


def focal_loss(p: torch.Tensor, t: torch.Tensor, alpha: float = 0.8, gamma: float = 2.0,
               eps: float = EPS_CLAMP) -> torch.Tensor:
    if not 0.0 < alpha < 1.0:
        raise ConfigError(f"focal alpha must lie in (0, 1), got {alpha}", key="focal_alpha")
    if gamma < 0:
        raise ConfigError(f"focal gamma must be >= 0, got {gamma}", key="focal_gamma")
    _same_shape(p, t)
    t = t.to(p.dtype)
    pc = p.clamp(eps, 1.0 - eps)
    pos = alpha * (1.0 - pc) ** gamma * t * torch.log(pc)
    neg = (1.0 - alpha) * pc ** gamma * (1.0 - t) * torch.log(1.0 - pc)
    return -(pos + neg).mean()


def cross_entropy_grading(probabilities: torch.Tensor, grades, eps: float = EPS_CLAMP) -> torch.Tensor:
    """Mean ``-log p[true grade]`` over rows of a ``(N, 5)`` probability batch."""
    probs = probabilities.unsqueeze(0) if probabilities.dim() == 1 else probabilities
    grades = torch.as_tensor(grades, dtype=torch.long, device=probs.device).reshape(-1)
    if grades.shape[0] != probs.shape[0]:
        raise ShapeError(f"{probs.shape[0]} probability rows but {grades.shape[0]} grades")
    sums = probs.detach().sum(dim=1)
    if (sums - 1.0).abs().max() > ROW_SUM_TOL:
        raise InvalidInputError("grade probabilities must sum to 1 per row")
    if grades.min() < 0 or grades.max() >= probs.shape[1]:
        raise InvalidInputError("grade out of range")
    picked = probs.gather(1, grades.unsqueeze(1)).squeeze(1)
    return -torch.log(picked.clamp_min(eps)).mean()


def segmentation_loss(p: torch.Tensor, t: torch.Tensor, config: TrainConfig, using_dual: bool,
                      weights: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Training loss for ``config.loss``.

    ``dual`` starts on the pixel Dice loss and becomes the dual loss once
    ``using_dual`` is set.
    """
    if config.loss == "dual":
        return dual_loss(p, t, config.dual()) if using_dual else dice_seg_loss(p, t)
    if config.loss == "dice":
        return dice_seg_loss(p, t)
    if config.loss == "wce":
        if weights is None:
            weights = torch.ones(p.shape[-3], dtype=p.dtype)
        return weighted_cross_entropy(p, t, weights)
    return focal_loss(p, t, config.focal_alpha, config.focal_gamma)
