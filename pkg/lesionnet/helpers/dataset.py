# File: helpers/dataset.py
import logging
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
import torch
from cachetools import LRUCache
from torch.utils.data import DataLoader, Dataset

from lesionnet.core_types import DatasetRecord, InvalidInputError, LesionVocabulary, VOCABULARY
from lesionnet.helpers.manifest import split_records
from lesionnet.helpers.masks_io import load_image, read_masks
from lesionnet.helpers.rasterize import masks_to_stack
from lesionnet.helpers.run_config import AugmentConfig
from lesionnet.training.augment import augment

__all__ = [
    "LesionDataset",
    "make_loader",
    "positive_class_weights",
    "split_records",
    "to_tensor_image",
    "to_tensor_masks",
]

log = logging.getLogger(__name__)


def to_tensor_image(image: np.ndarray) -> torch.Tensor:
    "(s, s, 3) float [0,1] -> (3, s, s) float32."
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InvalidInputError(f"expected an (s, s, 3) image, got {image.shape}")
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))


def to_tensor_masks(masks: np.ndarray) -> torch.Tensor:
    "(s, s, m) uint8 -> (m, s, s) uint8."
    masks = np.asarray(masks, dtype=np.uint8)
    if masks.ndim != 3:
        raise InvalidInputError(f"expected an (s, s, m) mask stack, got {masks.shape}")
    return torch.from_numpy(np.ascontiguousarray(masks.transpose(2, 0, 1)))


class LesionDataset(Dataset):
    """Records -> ``(image (3,s,s), masks (m,s,s), grade)`` tensors.

    Decoded pairs are kept in an LRU cache; augmentation draws from a
    per-sample stream seeded by ``(seed, epoch, index)`` so the result does
    not depend on which loader worker handles the sample.
    """

    def __init__(
        self,
        records: Iterable[DatasetRecord],
        augment_config: Optional[AugmentConfig] = None,
        seed: int = 0,
        cache_size: int = 256,
        dtype: torch.dtype = torch.float32,
        vocabulary: LesionVocabulary = VOCABULARY,
    ):
        self.records = list(records)
        self.augment_config = augment_config
        self.seed = seed
        self.dtype = dtype
        self.vocabulary = vocabulary
        self.epoch = 0
        self._cache = LRUCache(maxsize=cache_size) if cache_size else None

    def __len__(self) -> int:
        return len(self.records)

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def _decode(self, record: DatasetRecord) -> Tuple[np.ndarray, np.ndarray]:
        image = load_image(record.image_path)
        side = image.shape[0]
        if image.shape[1] != side:
            raise InvalidInputError(f"{record.image_id}: image must be square, got {image.shape[:2]}")
        if record.masks_dir is not None:
            masks = read_masks(record.masks_dir, record.image_id, self.vocabulary)
        else:
            masks = masks_to_stack(record.annotations or (), side, self.vocabulary)
        if masks.shape[:2] != image.shape[:2]:
            raise InvalidInputError(f"{record.image_id}: masks {masks.shape[:2]} do not match image {image.shape[:2]}")
        return image, masks

    def load(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        """Channels-last ``(image, masks)`` for ``index``, without augmentation."""
        if self._cache is None:
            return self._decode(self.records[index])
        pair = self._cache.get(index)
        if pair is None:
            pair = self._decode(self.records[index])
            self._cache[index] = pair
        return pair

    def __getitem__(self, index: int):
        record = self.records[index]
        image, masks = self.load(index)
        image_t = to_tensor_image(image)
        masks_t = to_tensor_masks(masks)
        if self.augment_config is not None and self.augment_config.enabled:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.epoch, index]))
            image_t, masks_t = augment(image_t, masks_t, rng, self.augment_config)
        return image_t.to(self.dtype), masks_t.to(self.dtype), torch.tensor(record.grade, dtype=torch.long)


def make_loader(dataset: LesionDataset, batch_size: int, shuffle: bool = False,
                seed: int = 0, num_workers: int = 0) -> DataLoader:
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=num_workers,
        generator=generator,
        drop_last=False,
    )


def positive_class_weights(dataset: LesionDataset, cap: float = 100.0,
                           indices: Optional[Sequence[int]] = None) -> torch.Tensor:
    """Per-lesion ``negative / positive`` pixel ratio, capped at ``cap``.

    A lesion with no positive pixel at all gets ``cap``.
    """
    m = dataset.vocabulary.m
    positive = np.zeros(m, dtype=np.int64)
    total = 0
    for i in (indices if indices is not None else range(len(dataset))):
        _, masks = dataset.load(i)
        positive += masks.reshape(-1, m).sum(axis=0, dtype=np.int64)
        total += masks.shape[0] * masks.shape[1]
    negative = total - positive
    weights = np.full(m, float(cap))
    nonzero = positive > 0
    weights[nonzero] = np.minimum(negative[nonzero] / positive[nonzero], cap)
    # Weights must stay positive even for a channel that is all ones.
    weights = np.maximum(weights, 1e-3)
    log.info("WCE positive weights: %s", np.round(weights, 2).tolist())
    return torch.as_tensor(weights, dtype=torch.float32)
