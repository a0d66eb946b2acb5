"""DR grade from lesion evidence, following the AAO grading table.

Simplified for synthetic data: a global iHE blob count replaces the
per-quadrant count, CWS alone is enough for DR3 and FiP alone for DR4.
"""

from lesionnet.core_types import ArrayLike, InvalidInputError, LesionVocabulary, VOCABULARY, as_binary_array
from lesionnet.lesions import DR4_LESIONS, SEVERE_IHE_COUNT


def grade_from_lesions(presence: ArrayLike, ihe_blob_count: int,
                       vocabulary: LesionVocabulary = VOCABULARY) -> int:
    present = as_binary_array(presence, "presence").reshape(-1)
    if present.shape[0] != vocabulary.m:
        raise InvalidInputError(f"presence needs {vocabulary.m} entries, got {present.shape[0]}")

    def has(lesion: str) -> bool:
        return lesion in vocabulary and bool(present[vocabulary.index(lesion)])

    if any(has(lesion) for lesion in DR4_LESIONS):
        return 4
    if has("CWS") or ihe_blob_count >= SEVERE_IHE_COUNT:
        return 3
    if has("iHE") or has("HaEx"):
        return 2
    if has("MA"):
        return 1
    return 0

