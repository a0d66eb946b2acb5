# File: helpers/overlay.py
import logging
from typing import Tuple

import cv2
import numpy as np
from PIL import Image, ImageDraw, ImageFont

from lesionnet.core_types import InvalidInputError, LesionVocabulary, VOCABULARY
from lesionnet.lesions import OVERLAY_COLORS

__all__ = ["render_overlay", "pad_to_multiple", "crop_to"]

log = logging.getLogger(__name__)

LEGEND_ROW = 12
LEGEND_PAD = 3


def pad_to_multiple(image: np.ndarray, multiple: int = 32) -> Tuple[np.ndarray, Tuple[int, int]]:
    """Zero-pad an ``(H, W, C)`` image at the bottom/right to a square side divisible by ``multiple``.

    Returns the padded image and the original ``(H, W)`` for :func:`crop_to`.
    """
    h, w = image.shape[:2]
    side = max(h, w)
    side = int(np.ceil(side / multiple)) * multiple
    padded = np.zeros((side, side) + image.shape[2:], dtype=image.dtype)
    padded[:h, :w] = image
    return padded, (h, w)


def crop_to(array: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    h, w = size
    return array[:h, :w]


def _legend(canvas: Image.Image, vocabulary: LesionVocabulary) -> None:
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    width = max(int(draw.textlength(lesion, font=font)) for lesion in vocabulary) + LEGEND_ROW + 3 * LEGEND_PAD
    height = LEGEND_ROW * len(vocabulary) + 2 * LEGEND_PAD
    draw.rectangle([0, 0, width, height], fill=(0, 0, 0))
    for row, lesion in enumerate(vocabulary):
        y = LEGEND_PAD + row * LEGEND_ROW
        color = OVERLAY_COLORS[lesion]
        draw.rectangle([LEGEND_PAD, y + 2, LEGEND_PAD + LEGEND_ROW - 4, y + LEGEND_ROW - 2], fill=color)
        draw.text((2 * LEGEND_PAD + LEGEND_ROW, y), lesion, fill=color, font=font)


def render_overlay(image: np.ndarray, masks: np.ndarray, vocabulary: LesionVocabulary = VOCABULARY,
                   legend: bool = True) -> np.ndarray:
    """Draw per-lesion mask contours over a float ``(H, W, 3)`` image.

    ``masks`` is the channels-last ``(H, W, m)`` binary stack.  Returns an
    ``(H, W, 3)`` uint8 RGB image of the same size as the input.
    """
    image = np.asarray(image)
    masks = np.asarray(masks)
    if masks.shape[:2] != image.shape[:2] or masks.shape[2] != vocabulary.m:
        raise InvalidInputError(f"masks {masks.shape} do not fit image {image.shape}")

    canvas = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    canvas = np.ascontiguousarray(canvas)
    for j, lesion in enumerate(vocabulary):
        channel = np.ascontiguousarray(masks[:, :, j] > 0, dtype=np.uint8)
        if not channel.any():
            continue
        contours, _ = cv2.findContours(channel, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_NONE)
        cv2.drawContours(canvas, contours, -1, OVERLAY_COLORS[lesion], thickness=1)

    if legend:
        pil = Image.fromarray(canvas)
        _legend(pil, vocabulary)
        canvas = np.asarray(pil)
    return canvas
