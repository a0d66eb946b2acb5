import numpy as np
import pytest

from lesionnet.core_types import InvalidInputError, VOCABULARY
from lesionnet.helpers.grade_rules import grade_from_lesions


def presence(*lesions):
    vector = np.zeros(VOCABULARY.m, dtype=np.uint8)
    for lesion in lesions:
        vector[VOCABULARY.index(lesion)] = 1
    return vector


@pytest.mark.parametrize(
    "lesions, ihe_blobs, grade",
    [
        ((), 0, 0),
        (("MA",), 0, 1),
        (("MA", "iHE"), 3, 2),
        (("HaEx",), 0, 2),
        (("CWS",), 0, 3),
        (("iHE",), 19, 2),
        (("iHE",), 20, 3),
        (("pHE", "MA", "iHE"), 4, 4),
        (("FiP",), 0, 4),
        (("vHE", "CWS"), 0, 4),
        (("NV",), 25, 4),
    ],
)
def test_priority_order(lesions, ihe_blobs, grade):
    assert grade_from_lesions(presence(*lesions), ihe_blobs) == grade


def test_rejects_non_binary_or_wrong_length():
    with pytest.raises(InvalidInputError):
        grade_from_lesions(np.full(VOCABULARY.m, 0.7), 0)
    with pytest.raises(InvalidInputError):
        grade_from_lesions(np.zeros(3, dtype=np.uint8), 0)
