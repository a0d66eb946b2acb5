# File: helpers/masks_io.py
import os
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from lesionnet.core_types import InvalidInputError, LesionVocabulary, MaskFileError, VOCABULARY

__all__ = [
    "mask_path",
    "write_masks",
    "read_masks",
    "save_image",
    "load_image",
]

log = logging.getLogger(__name__)

PathLike = Union[str, Path]


def mask_path(directory: PathLike, image_id: str, lesion: str) -> Path:
    return Path(directory) / f"{image_id}_{lesion}.png"


def write_masks(stack: np.ndarray, directory: PathLike, image_id: str,
                vocabulary: LesionVocabulary = VOCABULARY) -> None:
    """Write one {0,255} grayscale PNG per lesion for a channels-last stack."""
    stack = np.asarray(stack)
    if stack.ndim != 3 or stack.shape[2] != vocabulary.m:
        raise InvalidInputError(f"expected a (s, s, {vocabulary.m}) mask stack, got {stack.shape}")
    os.makedirs(directory, exist_ok=True)
    for j, lesion in enumerate(vocabulary):
        channel = np.where(stack[:, :, j] > 0, 255, 0).astype(np.uint8)
        Image.fromarray(channel).save(mask_path(directory, image_id, lesion))


def read_masks(directory: PathLike, image_id: str,
               vocabulary: LesionVocabulary = VOCABULARY) -> np.ndarray:
    """Inverse of :func:`write_masks`; a missing channel names its lesion."""
    channels = []
    for lesion in vocabulary:
        path = mask_path(directory, image_id, lesion)
        if not path.is_file():
            raise MaskFileError(lesion, path)
        with Image.open(path) as img:
            channels.append((np.asarray(img.convert("L")) > 127).astype(np.uint8))
    return np.stack(channels, axis=2)


def save_image(image: np.ndarray, path: PathLike) -> None:
    """Save a float [0,1] channels-last RGB image as an 8-bit PNG."""
    image = np.asarray(image)
    os.makedirs(Path(path).parent, exist_ok=True)
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)


def load_image(path: PathLike) -> np.ndarray:
    """Read any RGB image normalized to float32 [0,1], channels-last."""
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("RGB"), dtype=np.float32)
    except (OSError, UnidentifiedImageError) as e:
        raise InvalidInputError(f"cannot read image {path}: {e}") from e
    return pixels / 255.0
