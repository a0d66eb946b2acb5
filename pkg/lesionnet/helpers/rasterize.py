"""Turn expert annotations (polygons, rotated ellipses) into binary masks.

A pixel ``(row, col)`` is set when its center ``(col + 0.5, row + 0.5)`` lies
inside the shape: even-odd rule for polygons, the implicit equation for
ellipses.  Coordinates are ``(x, y)`` = ``(column, row)`` in pixels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple

import cv2
import numpy as np
from matplotlib.path import Path as PolygonPath

from lesionnet.core_types import InvalidInputError, LesionVocabulary, VOCABULARY

log = logging.getLogger(__name__)

SHAPE_KINDS = ("polygon", "ellipse")


@dataclass(frozen=True)
class Annotation:
    lesion: str
    shape_kind: str
    polygon: Optional[Tuple[Tuple[float, float], ...]] = None
    # (center_x, center_y, semi_axis_a, semi_axis_b, rotation_radians)
    ellipse: Optional[Tuple[float, float, float, float, float]] = None

    @classmethod
    def from_dict(cls, data: dict) -> "Annotation":
        """Build from the manifest form ``{lesion, kind, points | ellipse}``."""
        kind = data.get("kind")
        points = data.get("points")
        ellipse = data.get("ellipse")
        return cls(
            lesion=data.get("lesion"),
            shape_kind=kind,
            polygon=tuple(tuple(float(v) for v in p) for p in points) if points is not None else None,
            ellipse=tuple(float(v) for v in ellipse) if ellipse is not None else None,
        )

    def to_dict(self) -> dict:
        if self.shape_kind == "polygon":
            return {"lesion": self.lesion, "kind": "polygon", "points": [list(p) for p in self.polygon]}
        return {"lesion": self.lesion, "kind": "ellipse", "ellipse": list(self.ellipse)}

    def problems(self) -> List[str]:
        if self.shape_kind not in SHAPE_KINDS:
            return [f"shape kind must be one of {SHAPE_KINDS}, got {self.shape_kind!r}"]
        if self.shape_kind == "polygon":
            if not self.polygon or len(self.polygon) < 3:
                return ["polygon needs at least 3 vertices"]
            if any(len(p) != 2 or not all(math.isfinite(v) for v in p) for p in self.polygon):
                return ["polygon vertices must be finite (x, y) pairs"]
            return []
        if self.ellipse is None or len(self.ellipse) != 5:
            return ["ellipse needs (center_x, center_y, a, b, rotation)"]
        if not all(math.isfinite(v) for v in self.ellipse):
            return ["ellipse parameters must be finite"]
        if self.ellipse[2] <= 0 or self.ellipse[3] <= 0:
            return ["ellipse semi-axes must be positive"]
        return []


def _check(ann: Annotation) -> None:
    problems = ann.problems()
    if problems:
        raise InvalidInputError(f"invalid {ann.lesion} annotation: {'; '.join(problems)}")


def _window(lo: float, hi: float, side: int) -> Tuple[int, int]:
    "Pixel index range [start, stop) whose centers may fall in [lo, hi]."
    start = max(0, int(math.floor(lo - 0.5)))
    stop = min(side, int(math.ceil(hi + 0.5)) + 1)
    return start, max(start, stop)


def rasterize_annotation(ann: Annotation, side: int) -> np.ndarray:
    """Single-channel uint8 mask ``(side, side)`` for one annotation."""
    _check(ann)
    mask = np.zeros((side, side), dtype=np.uint8)

    if ann.shape_kind == "polygon":
        verts = np.asarray(ann.polygon, dtype=np.float64)
        x0, x1 = _window(verts[:, 0].min(), verts[:, 0].max(), side)
        y0, y1 = _window(verts[:, 1].min(), verts[:, 1].max(), side)
        if x1 > x0 and y1 > y0:
            cols, rows = np.meshgrid(np.arange(x0, x1), np.arange(y0, y1))
            centers = np.column_stack([cols.ravel() + 0.5, rows.ravel() + 0.5])
            # matplotlib's point-in-path is the crossing-number (even-odd) test
            inside = PolygonPath(verts).contains_points(centers)
            mask[y0:y1, x0:x1] = inside.reshape(rows.shape)
    else:
        cx, cy, a, b, theta = ann.ellipse
        reach = max(a, b)
        x0, x1 = _window(cx - reach, cx + reach, side)
        y0, y1 = _window(cy - reach, cy + reach, side)
        if x1 > x0 and y1 > y0:
            cols, rows = np.meshgrid(np.arange(x0, x1) + 0.5, np.arange(y0, y1) + 0.5)
            dx, dy = cols - cx, rows - cy
            cos_t, sin_t = math.cos(theta), math.sin(theta)
            u = (dx * cos_t + dy * sin_t) / a
            v = (-dx * sin_t + dy * cos_t) / b
            mask[y0:y1, x0:x1] = (u * u + v * v <= 1.0)

    if not mask.any():
        log.warning("%s %s annotation covers no pixel of a %dx%d image", ann.lesion, ann.shape_kind, side, side)
    return mask


def masks_to_stack(annotations: Iterable[Annotation], side: int,
                   vocabulary: LesionVocabulary = VOCABULARY) -> np.ndarray:
    """Channels-last uint8 stack ``(side, side, m)``: per-lesion union of shapes."""
    stack = np.zeros((side, side, vocabulary.m), dtype=np.uint8)
    for ann in annotations:
        if ann.lesion not in vocabulary:
            raise InvalidInputError(f"unknown lesion {ann.lesion!r}")
        channel = vocabulary.index(ann.lesion)
        stack[:, :, channel] |= rasterize_annotation(ann, side)
    return stack


def count_blobs(mask: np.ndarray) -> int:
    """Number of 8-connected components in a binary mask."""
    n_labels, _ = cv2.connectedComponents(np.ascontiguousarray(mask, dtype=np.uint8), connectivity=8)
    return int(n_labels) - 1

