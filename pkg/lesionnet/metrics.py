"""Evaluation: per-lesion pixel F1, per-lesion image F1 and quadratic weighted kappa.

F1 counts are pooled over every unit (pixel or image) of every image before
the ratio is taken.  A lesion with no positives and no predictions scores 1.0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch
from sklearn.metrics import confusion_matrix

from lesionnet.core_types import (
    DEFAULT_THRESHOLD,
    ArrayLike,
    InvalidInputError,
    LesionVocabulary,
    VOCABULARY,
    as_binary_array,
    grades_array,
    presence_from_maps,
    threshold_maps,
)
from lesionnet.helpers.dataset import make_loader
from lesionnet.lesions import NUM_GRADES
from lesionnet.models.multitask import predict_grade

log = logging.getLogger(__name__)


# --- F1 ---
@dataclass
class ConfusionCounts:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @classmethod
    def zeros(cls, m: int) -> "ConfusionCounts":
        return cls(*(np.zeros(m, dtype=np.int64) for _ in range(4)))

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> np.ndarray:
        return self.tp + self.fp + self.fn + self.tn

    def f1(self) -> np.ndarray:
        denom = 2 * self.tp + self.fp + self.fn
        scores = np.ones(len(self.tp), dtype=np.float64)
        nonzero = denom > 0
        scores[nonzero] = 2 * self.tp[nonzero] / denom[nonzero]
        return scores

    def as_dict(self, vocabulary: LesionVocabulary = VOCABULARY) -> Dict[str, Dict[str, int]]:
        return {
            lesion: {"tp": int(self.tp[j]), "fp": int(self.fp[j]), "fn": int(self.fn[j]), "tn": int(self.tn[j])}
            for j, lesion in enumerate(vocabulary)
        }


def confusion_counts(pred: ArrayLike, truth: ArrayLike, channel_axis: int) -> ConfusionCounts:
    """Per-channel counts pooled over every other axis."""
    pred = as_binary_array(pred, "prediction").astype(bool)
    truth = as_binary_array(truth, "ground truth").astype(bool)
    if pred.shape != truth.shape:
        raise InvalidInputError(f"prediction {pred.shape} and ground truth {truth.shape} differ")
    pred = np.moveaxis(pred, channel_axis, -1).reshape(-1, pred.shape[channel_axis])
    truth = np.moveaxis(truth, channel_axis, -1).reshape(-1, truth.shape[channel_axis])
    return ConfusionCounts(
        tp=(pred & truth).sum(axis=0, dtype=np.int64),
        fp=(pred & ~truth).sum(axis=0, dtype=np.int64),
        fn=(~pred & truth).sum(axis=0, dtype=np.int64),
        tn=(~pred & ~truth).sum(axis=0, dtype=np.int64),
    )


@dataclass
class F1Result:
    per_lesion: np.ndarray
    counts: ConfusionCounts

    @property
    def mean(self) -> float:
        return float(self.per_lesion.mean())

    def as_dict(self, vocabulary: LesionVocabulary = VOCABULARY) -> Dict[str, float]:
        return {lesion: float(self.per_lesion[j]) for j, lesion in enumerate(vocabulary)}


def pixel_f1(pred: ArrayLike, truth: ArrayLike) -> F1Result:
    """Masks ``(N, m, H, W)`` or ``(m, H, W)``; pixels are the units."""
    counts = confusion_counts(pred, truth, channel_axis=-3)
    return F1Result(counts.f1(), counts)


def image_f1(pred: ArrayLike, truth: ArrayLike) -> F1Result:
    """Presence ``(N, m)``; images are the units."""
    counts = confusion_counts(pred, truth, channel_axis=-1)
    return F1Result(counts.f1(), counts)


class F1Accumulator:
    """Running pixel and image counts; shards combine with ``+``."""

    def __init__(self, m: int = VOCABULARY.m):
        self.pixel = ConfusionCounts.zeros(m)
        self.image = ConfusionCounts.zeros(m)

    def update(self, pred_masks: ArrayLike, true_masks: ArrayLike) -> None:
        self.pixel = self.pixel + confusion_counts(pred_masks, true_masks, channel_axis=-3)
        self.image = self.image + confusion_counts(
            presence_from_maps(_tensor(pred_masks)), presence_from_maps(_tensor(true_masks)), channel_axis=-1
        )

    def __add__(self, other: "F1Accumulator") -> "F1Accumulator":
        out = F1Accumulator(len(self.pixel.tp))
        out.pixel = self.pixel + other.pixel
        out.image = self.image + other.image
        return out

    def pixel_f1(self) -> F1Result:
        return F1Result(self.pixel.f1(), self.pixel)

    def image_f1(self) -> F1Result:
        return F1Result(self.image.f1(), self.image)


def _tensor(values: ArrayLike) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values
    return torch.from_numpy(np.asarray(values))


# --- Kappa ---
@dataclass
class GradeConfusion:
    matrix: np.ndarray = field(default_factory=lambda: np.zeros((NUM_GRADES, NUM_GRADES), dtype=np.int64))

    @classmethod
    def from_grades(cls, true_grades: Sequence[int], pred_grades: Sequence[int]) -> "GradeConfusion":
        true = grades_array(true_grades)
        pred = grades_array(pred_grades)
        if true.shape != pred.shape:
            raise InvalidInputError(f"{true.size} true grades but {pred.size} predictions")
        return cls(confusion_matrix(true, pred, labels=list(range(NUM_GRADES))).astype(np.int64))

    def __add__(self, other: "GradeConfusion") -> "GradeConfusion":
        return GradeConfusion(self.matrix + other.matrix)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def true_marginal(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def pred_marginal(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def kappa(self) -> float:
        if self.total == 0:
            raise InvalidInputError("no graded images")
        n = NUM_GRADES
        observed = self.matrix / self.total
        expected = np.outer(self.true_marginal, self.pred_marginal) / float(self.total) ** 2
        idx = np.arange(n)
        weights = (idx[:, None] - idx[None, :]) ** 2 / float((n - 1) ** 2)
        denom = float((weights * expected).sum())
        if denom == 0.0:
            # every sample on the same diagonal cell
            return 1.0
        return 1.0 - float((weights * observed).sum()) / denom


def quadratic_weighted_kappa(true_grades: Sequence[int], pred_grades: Sequence[int]) -> float:
    return GradeConfusion.from_grades(true_grades, pred_grades).kappa()


# --- Reports ---
def segmentation_report(acc: F1Accumulator, vocabulary: LesionVocabulary = VOCABULARY) -> Dict[str, Any]:
    pix = acc.pixel_f1()
    img = acc.image_f1()
    return {
        "lesions": list(vocabulary),
        "pixel_f1": pix.as_dict(vocabulary),
        "pixel_f1_mean": pix.mean,
        "image_f1": img.as_dict(vocabulary),
        "image_f1_mean": img.mean,
        "counts": {"pixel": pix.counts.as_dict(vocabulary), "image": img.counts.as_dict(vocabulary)},
        "n_images": int(img.counts.total[0]) if len(img.counts.total) else 0,
    }


def grading_report(confusion: GradeConfusion, acc: Optional[F1Accumulator] = None,
                   vocabulary: LesionVocabulary = VOCABULARY) -> Dict[str, Any]:
    report = segmentation_report(acc, vocabulary) if acc is not None else {"n_images": confusion.total}
    report["kappa"] = confusion.kappa()
    report["grade_confusion"] = confusion.matrix.tolist()
    return report


def _batches(dataset, batch_size: int):
    return make_loader(dataset, batch_size=batch_size, shuffle=False)


def _param_dtype(net: torch.nn.Module) -> torch.dtype:
    return next(net.parameters()).dtype


def evaluate_segmentation(net, dataset, batch_size: int = 8,
                          threshold: float = DEFAULT_THRESHOLD) -> Dict[str, Any]:
    """Pixel and image F1 of a Lesion-Net over ``dataset`` (no augmentation)."""
    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty split")
    acc = F1Accumulator(dataset.vocabulary.m)
    was_training = net.training
    net.eval()
    dtype = _param_dtype(net)
    with torch.no_grad():
        for images, masks, _ in _batches(dataset, batch_size):
            maps = net(images.to(dtype))
            acc.update(threshold_maps(maps, threshold), masks.to(torch.uint8))
    net.train(was_training)
    return segmentation_report(acc, dataset.vocabulary)


def evaluate_grading(net, dataset, batch_size: int = 8,
                     threshold: float = DEFAULT_THRESHOLD) -> Dict[str, Any]:
    """Kappa of a grading net, plus lesion F1 when it carries a Lesion-Net branch."""
    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate on an empty split")
    true: List[int] = []
    pred: List[int] = []
    acc = F1Accumulator(dataset.vocabulary.m) if net.lesion_net is not None else None
    was_training = net.training
    net.eval()
    dtype = _param_dtype(net)
    with torch.no_grad():
        for images, masks, grades in _batches(dataset, batch_size):
            out = net(images.to(dtype))
            true.extend(grades.tolist())
            pred.extend(predict_grade(out.probabilities).tolist())
            if acc is not None:
                acc.update(threshold_maps(out.maps, threshold), masks.to(torch.uint8))
    net.train(was_training)
    return grading_report(GradeConfusion.from_grades(true, pred), acc, dataset.vocabulary)


def oracle_report(dataset, task: str) -> Dict[str, Any]:
    """Ground truth scored against itself; every score must come out perfect."""
    acc = F1Accumulator(dataset.vocabulary.m)
    grades: List[int] = []
    for i in range(len(dataset)):
        _, masks = dataset.load(i)
        stack = torch.from_numpy(np.ascontiguousarray(masks.transpose(2, 0, 1)))[None]
        acc.update(stack, stack)
        grades.append(int(dataset.records[i].grade))
    if task == "grade":
        return grading_report(GradeConfusion.from_grades(grades, grades), acc, dataset.vocabulary)
    return segmentation_report(acc, dataset.vocabulary)


def summarize_report(report: Dict[str, Any]) -> str:
    parts = []
    if "pixel_f1_mean" in report:
        parts.append(f"seg F1 {report['pixel_f1_mean']:.3f}")
        parts.append(f"clf F1 {report['image_f1_mean']:.3f}")
    if "kappa" in report:
        parts.append(f"kappa {report['kappa']:.3f}")
    parts.append(f"n={report.get('n_images', 0)}")
    return " | ".join(parts)
