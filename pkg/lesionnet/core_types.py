"""Shared domain types, errors and the pixel-to-image label rules.

Maps and masks handled here are torch tensors laid out channels-first, either
a single stack ``(m, H, W)`` or a batch ``(N, m, H, W)``.  Files on disk keep
the channels-last layout; conversion happens in
:mod:`lesionnet.helpers.dataset`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch

from lesionnet.lesions import LESIONS, NUM_GRADES

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
DEFAULT_THRESHOLD = 0.5

ArrayLike = Union[torch.Tensor, np.ndarray]


# --- Exceptions ---
class LesionNetError(Exception):
    "Base exception for lesionnet failures."


class InvalidInputError(LesionNetError):
    "Raised when an operation receives values outside its domain."


class ConfigError(LesionNetError):
    "Raised for invalid configuration values."

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class ShapeError(LesionNetError):
    "Raised when tensor shapes break a size contract."


class ManifestError(LesionNetError):
    def __init__(self, message: str, line: Optional[int] = None):
        text = f"{message} at line {line}" if line is not None else message
        super().__init__(text)
        self.line = line


class DuplicateRecordError(ManifestError):
    def __init__(self, image_id: str, line: int, first_line: int):
        super().__init__(
            f"duplicate image_id {image_id!r} (first seen at line {first_line})", line
        )
        self.image_id = image_id
        self.first_line = first_line


class MaskFileError(LesionNetError):
    def __init__(self, lesion: str, path: Path):
        super().__init__(f"missing mask file for lesion {lesion}: {path}")
        self.lesion = lesion
        self.path = path


class CheckpointError(LesionNetError):
    "Raised when a checkpoint is unreadable or incompatible."


class TrainingAbortedError(LesionNetError):
    def __init__(self, message: str, diagnostics: Optional[dict] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# --- Data Structures ---
@dataclass(frozen=True)
class LesionVocabulary:
    lesions: Tuple[str, ...] = tuple(LESIONS)

    @property
    def m(self) -> int:
        return len(self.lesions)

    def index(self, lesion: str) -> int:
        try:
            return self.lesions.index(lesion)
        except ValueError:
            raise InvalidInputError(f"unknown lesion {lesion!r}") from None

    def __contains__(self, lesion: object) -> bool:
        return lesion in self.lesions

    def __iter__(self):
        return iter(self.lesions)

    def __len__(self) -> int:
        return len(self.lesions)


VOCABULARY = LesionVocabulary()


def is_valid_grade(grade: Any) -> bool:
    return isinstance(grade, (int, np.integer)) and not isinstance(grade, bool) and 0 <= grade < NUM_GRADES


@dataclass(frozen=True)
class DatasetRecord:
    """One manifest entry.

    Values are stored as given; :func:`validate_record` reports what is wrong
    with them instead of the constructor refusing them.
    """

    image_id: str
    image_path: Path
    grade: Any
    split: str
    annotations: Optional[Tuple[Any, ...]] = None
    masks_dir: Optional[Path] = None
    line: Optional[int] = field(default=None, compare=False)


# --- Label rules ---
def _as_tensor(maps: ArrayLike) -> torch.Tensor:
    if isinstance(maps, np.ndarray):
        return torch.from_numpy(maps)
    return maps


def presence_from_maps(maps: ArrayLike) -> torch.Tensor:
    """Global max pooling: ``P_j = max_i p_{i,j}`` over the two spatial axes.

    ``(m, H, W)`` gives a length-``m`` vector, ``(N, m, H, W)`` gives ``(N, m)``.
    """
    maps = _as_tensor(maps)
    if maps.dim() < 3:
        raise InvalidInputError(f"expected (m, H, W) or (N, m, H, W) maps, got {tuple(maps.shape)}")
    if maps.numel() == 0 or maps.shape[-1] == 0 or maps.shape[-2] == 0:
        raise InvalidInputError("maps have an empty spatial extent")
    return maps.amax(dim=(-2, -1))


def threshold_maps(maps: ArrayLike, tau: float = DEFAULT_THRESHOLD) -> torch.Tensor:
    """Binary masks with ``maps >= tau`` (inclusive), same shape, dtype uint8."""
    if not 0.0 < tau < 1.0:
        raise ConfigError(f"threshold must lie in (0, 1), got {tau}", key="tau")
    maps = _as_tensor(maps)
    return (maps >= tau).to(torch.uint8)


def validate_record(record: DatasetRecord, vocabulary: LesionVocabulary = VOCABULARY,
                    check_files: bool = True) -> List[str]:
    """Return the list of problems with ``record``; empty means valid."""
    problems: List[str] = []

    if not record.image_id or not isinstance(record.image_id, str):
        problems.append("missing image_id")
    if not is_valid_grade(record.grade):
        problems.append(f"grade out of range: {record.grade!r}")
    if record.split not in SPLITS:
        problems.append(f"invalid split: {record.split!r}")

    if check_files and not Path(record.image_path).is_file():
        problems.append(f"missing file: {record.image_path}")

    if record.annotations is None and record.masks_dir is None:
        problems.append("no lesion labels: needs masks_dir or annotations")

    if record.masks_dir is not None and check_files:
        masks_dir = Path(record.masks_dir)
        if not masks_dir.is_dir():
            problems.append(f"missing file: {masks_dir}")
        else:
            for lesion in vocabulary:
                path = masks_dir / f"{record.image_id}_{lesion}.png"
                if not path.is_file():
                    problems.append(f"missing file: {path}")

    for i, ann in enumerate(record.annotations or ()):
        lesion = getattr(ann, "lesion", None)
        if lesion not in vocabulary:
            problems.append(f"unknown lesion {lesion!r} in annotation {i}")
        check = getattr(ann, "problems", None)
        if check is None:
            problems.append(f"malformed annotation {i}")
            continue
        problems.extend(f"malformed annotation {i}: {p}" for p in check())

    return problems


def _binary_check(values: np.ndarray, what: str) -> None:
    if values.size and not np.isin(values, (0, 1)).all():
        raise InvalidInputError(f"{what} must be binary")


def as_binary_array(values: ArrayLike, what: str = "input") -> np.ndarray:
    """Numpy view of a binary tensor/array, raising on any non-binary value."""
    if isinstance(values, torch.Tensor):
        values = values.detach().cpu().numpy()
    values = np.asarray(values)
    _binary_check(values, what)
    return values.astype(np.uint8, copy=False)


def grades_array(grades: Sequence[Any]) -> np.ndarray:
    if isinstance(grades, torch.Tensor):
        grades = grades.detach().cpu().numpy()
    arr = np.asarray(grades)
    if arr.size == 0:
        raise InvalidInputError("grade list is empty")
    if not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0 or arr.max() >= NUM_GRADES:
        raise InvalidInputError(f"grades must be integers in [0, {NUM_GRADES - 1}]")
    return arr.astype(np.int64)
