"""Synthetic fundus images with exact lesion masks and rule-derived grades.

Each sample draws from its own substream ``SeedSequence([seed, index])`` so a
dataset can be generated in shards by different workers and still match a
single-process run bit for bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from lesionnet.core_types import VOCABULARY
from lesionnet.helpers.grade_rules import grade_from_lesions
from lesionnet.helpers.rasterize import Annotation, rasterize_annotation
from lesionnet.helpers.run_config import SynthConfig
from lesionnet.lesions import DR4_LESIONS, SEVERE_IHE_COUNT

log = logging.getLogger(__name__)

REFERENCE_SIDE = 128
# Big lesions first so small ones stay visible on top.
PAINT_ORDER = ["vHE", "pHE", "FiP", "NV", "CWS", "HaEx", "iHE", "MA"]
SEVERE_IHE_RANGE = (SEVERE_IHE_COUNT, SEVERE_IHE_COUNT + 6)


@dataclass
class SynthSample:
    image: np.ndarray          # (s, s, 3) float32 in [0, 1]
    masks: np.ndarray          # (s, s, m) uint8 in {0, 1}
    grade: int
    ihe_blobs: int
    annotations: Tuple[Annotation, ...]


def _nonempty_subset(rng: np.random.Generator, lesions) -> List[str]:
    picked = [lesion for lesion in lesions if rng.random() < 0.5]
    return picked or [lesions[int(rng.integers(len(lesions)))]]


def _plan_lesions(rng: np.random.Generator, target: int, config: SynthConfig) -> dict:
    """Lesion -> blob count for a sample aimed at grade ``target``."""

    def count(lesion: str) -> int:
        lo, hi = config.blob_counts[lesion]
        if lesion == "iHE":
            hi = min(hi, SEVERE_IHE_COUNT - 1)
            lo = min(lo, hi)
        return int(rng.integers(lo, hi + 1))

    plan = {}
    if target >= 1 and (target == 1 or rng.random() < 0.5):
        plan["MA"] = count("MA")
    if target >= 2:
        needed = target == 2
        for lesion in (_nonempty_subset(rng, ["iHE", "HaEx"]) if needed else ["iHE", "HaEx"]):
            if needed or rng.random() < 0.5:
                plan[lesion] = count(lesion)
    if target == 3:
        if rng.random() < config.severe_count_prob:
            plan["iHE"] = int(rng.integers(SEVERE_IHE_RANGE[0], SEVERE_IHE_RANGE[1] + 1))
        else:
            plan["CWS"] = count("CWS")
    if target == 4:
        if rng.random() < 0.5:
            plan["CWS"] = count("CWS")
        for lesion in _nonempty_subset(rng, DR4_LESIONS):
            plan[lesion] = count(lesion)
    return plan


def _field(side: int, config: SynthConfig) -> Tuple[np.ndarray, np.ndarray]:
    "Dark circular retina on black, plus the boolean field mask."
    centers = np.arange(side) + 0.5
    xx, yy = np.meshgrid(centers, centers)
    radius = config.field_radius * side
    dist = np.hypot(xx - side / 2.0, yy - side / 2.0) / radius
    inside = dist <= 1.0
    shade = np.where(inside, 1.0 - 0.35 * dist ** 2, 0.0)
    image = shade[:, :, None] * np.asarray(config.field_color, dtype=np.float64)[None, None, :]
    return image, inside


def _blob(rng: np.random.Generator, lesion: str, side: int, config: SynthConfig) -> Annotation:
    scale = side / REFERENCE_SIDE
    lo, hi = config.radius_ranges[lesion]
    a = float(rng.uniform(lo, hi)) * scale
    # Under one pixel a blob can miss every pixel centre.
    a = max(1.0, a)
    b = max(1.0, a * float(rng.uniform(0.6, 1.0)))
    theta = float(rng.uniform(0.0, math.pi))
    # Keep the whole blob inside the field.
    reach = max(0.0, config.field_radius * side - max(a, b) - 1.0)
    rho = reach * math.sqrt(float(rng.random()))
    phi = float(rng.uniform(0.0, 2.0 * math.pi))
    cx = side / 2.0 + rho * math.cos(phi)
    cy = side / 2.0 + rho * math.sin(phi)
    return Annotation(lesion=lesion, shape_kind="ellipse", ellipse=(cx, cy, a, b, theta))


def synth_sample(config: SynthConfig, index: int) -> SynthSample:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    side = config.image_side
    mix = np.asarray(config.grade_mix, dtype=np.float64)
    target = int(rng.choice(len(mix), p=mix / mix.sum()))

    image, inside = _field(side, config)
    masks = np.zeros((side, side, VOCABULARY.m), dtype=np.uint8)
    annotations: List[Annotation] = []
    ihe_blobs = 0

    plan = _plan_lesions(rng, target, config)
    for lesion in PAINT_ORDER:
        for _ in range(plan.get(lesion, 0)):
            ann = _blob(rng, lesion, side, config)
            blob = rasterize_annotation(ann, side)
            if not blob.any():
                continue
            annotations.append(ann)
            masks[:, :, VOCABULARY.index(lesion)] |= blob
            image[blob.astype(bool)] = config.colors[lesion]
            if lesion == "iHE":
                ihe_blobs += 1

    noise = rng.normal(0.0, config.noise_std, size=image.shape)
    image = np.clip(image + noise * inside[:, :, None], 0.0, 1.0).astype(np.float32)

    presence = masks.reshape(-1, VOCABULARY.m).max(axis=0)
    grade = grade_from_lesions(presence, ihe_blobs)
    return SynthSample(image=image, masks=masks, grade=grade, ihe_blobs=ihe_blobs,
                       annotations=tuple(annotations))


def synth_generate(config: SynthConfig, n: int, start: int = 0) -> List[SynthSample]:
    """Generate samples ``start .. start + n - 1``; deterministic given the seed."""
    samples = [synth_sample(config, start + i) for i in range(n)]
    if samples:
        log.info("Generated %d synthetic samples (seed=%d, side=%d)", n, config.seed, config.image_side)
    return samples
