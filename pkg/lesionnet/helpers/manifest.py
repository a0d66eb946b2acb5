import os
import json
import hashlib
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional

from lesionnet.core_types import DatasetRecord, DuplicateRecordError, ManifestError, SPLITS, validate_record
from lesionnet.helpers.rasterize import Annotation

log = logging.getLogger(__name__)

REQUIRED_KEYS = ("image_id", "image", "grade", "split")
# train / val / test
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


def _record_from_line(entry: dict, base: Path, line: int) -> DatasetRecord:
    if not isinstance(entry, dict):
        raise ManifestError("manifest line is not an object", line)
    missing = [k for k in REQUIRED_KEYS if k not in entry]
    if missing:
        raise ManifestError(f"missing keys {missing}", line)
    if "masks_dir" not in entry and "annotations" not in entry:
        raise ManifestError("needs masks_dir or annotations", line)

    annotations = None
    if entry.get("annotations") is not None:
        try:
            annotations = tuple(Annotation.from_dict(a) for a in entry["annotations"])
        except (AttributeError, TypeError, ValueError) as e:
            raise ManifestError(f"malformed annotation ({e})", line) from e

    grade = entry["grade"]
    if isinstance(grade, str) and grade.strip().lstrip("-").isdigit():
        grade = int(grade)

    masks_dir = entry.get("masks_dir")
    return DatasetRecord(
        image_id=str(entry["image_id"]),
        image_path=base / entry["image"],
        grade=grade,
        split=entry["split"],
        annotations=annotations,
        masks_dir=base / masks_dir if masks_dir is not None else None,
        line=line,
    )


def parse_manifest(path, check_files: bool = True) -> List[DatasetRecord]:
    """Read a JSON-lines manifest; relative paths resolve against its folder."""
    path = Path(path)
    base = path.parent
    records: List[DatasetRecord] = []
    seen: Dict[str, int] = {}

    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            if not raw.strip():
                continue
            try:
                entry = json.loads(raw)
            except json.JSONDecodeError as e:
                raise ManifestError(f"invalid JSON ({e.msg})", line_no) from e

            record = _record_from_line(entry, base, line_no)
            problems = validate_record(record, check_files=check_files)
            if problems:
                # First problem is the most specific one.
                raise ManifestError(problems[0], line_no)
            if record.image_id in seen:
                raise DuplicateRecordError(record.image_id, line_no, seen[record.image_id])
            seen[record.image_id] = line_no
            records.append(record)

    log.info("Parsed %d records from %s", len(records), path)
    return records


def write_manifest(entries: Iterable[dict], path) -> None:
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


def assign_splits(image_ids: List[str], seed: int) -> Dict[str, str]:
    """70/10/20 split, ids ordered by a seeded hash so the split is stable."""

    def key(image_id: str) -> str:
        return hashlib.sha256(f"{seed}:{image_id}".encode("utf-8")).hexdigest()

    ordered = sorted(image_ids, key=key)
    n = len(ordered)
    n_train = int(round(SPLIT_FRACTIONS[0] * n))
    n_val = int(round(SPLIT_FRACTIONS[1] * n))
    splits = {}
    for i, image_id in enumerate(ordered):
        splits[image_id] = SPLITS[0] if i < n_train else SPLITS[1] if i < n_train + n_val else SPLITS[2]
    return splits


def split_records(records: Iterable[DatasetRecord], split: Optional[str]) -> List[DatasetRecord]:
    if split is None:
        return list(records)
    if split not in SPLITS:
        raise ManifestError(f"unknown split {split!r}")
    return [r for r in records if r.split == split]
