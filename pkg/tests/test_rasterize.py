import math
import logging

import numpy as np
import pytest
from matplotlib.path import Path as PolygonPath

from lesionnet.core_types import InvalidInputError, VOCABULARY
from lesionnet.helpers.rasterize import Annotation, count_blobs, masks_to_stack, rasterize_annotation


def polygon(lesion, points):
    return Annotation(lesion=lesion, shape_kind="polygon", polygon=tuple(tuple(map(float, p)) for p in points))


def ellipse(lesion, cx, cy, a, b, theta=0.0):
    return Annotation(lesion=lesion, shape_kind="ellipse", ellipse=(cx, cy, a, b, theta))


@pytest.mark.parametrize("r", [8, 12, 20])
def test_disc_area_close_to_pi_r_squared(r):
    mask = rasterize_annotation(ellipse("MA", 32.0, 32.0, r, r), 64)
    assert abs(mask.sum() - math.pi * r * r) <= 0.05 * math.pi * r * r


def test_square_polygon_sets_exactly_covered_centers():
    # pixel columns/rows 2..5 have centers 2.5..5.5
    mask = rasterize_annotation(polygon("HaEx", [(2, 2), (6, 2), (6, 6), (2, 6)]), 10)
    expected = np.zeros((10, 10), dtype=np.uint8)
    expected[2:6, 2:6] = 1
    assert np.array_equal(mask, expected)


def test_polygon_matches_brute_force_even_odd():
    verts = [(3.2, 1.7), (17.9, 4.1), (9.3, 8.8), (15.4, 17.2), (2.1, 12.6)]
    mask = rasterize_annotation(polygon("iHE", verts), 20)
    path = PolygonPath(np.asarray(verts))
    for row in range(20):
        for col in range(20):
            assert mask[row, col] == int(path.contains_point((col + 0.5, row + 0.5)))


def test_rotated_ellipse_matches_implicit_equation():
    cx, cy, a, b, theta = 15.3, 12.8, 9.0, 4.0, 0.7
    mask = rasterize_annotation(ellipse("CWS", cx, cy, a, b, theta), 32)
    for row in range(32):
        for col in range(32):
            dx, dy = col + 0.5 - cx, row + 0.5 - cy
            u = (dx * math.cos(theta) + dy * math.sin(theta)) / a
            v = (-dx * math.sin(theta) + dy * math.cos(theta)) / b
            assert mask[row, col] == int(u * u + v * v <= 1.0)


def test_shape_outside_bounds_gives_empty_mask_with_warning(caplog):
    with caplog.at_level(logging.WARNING):
        mask = rasterize_annotation(polygon("NV", [(40, 40), (50, 40), (50, 50)]), 16)
    assert mask.sum() == 0
    assert "covers no pixel" in caplog.text


def test_shapes_are_clipped_to_bounds():
    mask = rasterize_annotation(ellipse("vHE", 0.0, 0.0, 5.0, 5.0), 16)
    assert mask.shape == (16, 16)
    assert mask[0, 0] == 1 and mask[15, 15] == 0


def test_translation_by_integer_offset():
    verts = [(4.3, 3.1), (11.7, 5.2), (8.2, 12.9)]
    base = rasterize_annotation(polygon("MA", verts), 32)
    moved = rasterize_annotation(polygon("MA", [(x + 7, y + 5) for x, y in verts]), 32)
    assert np.array_equal(np.roll(np.roll(base, 5, axis=0), 7, axis=1), moved)


def test_invalid_annotation_raises():
    with pytest.raises(InvalidInputError):
        rasterize_annotation(ellipse("MA", 5, 5, 0.0, 2.0), 16)
    with pytest.raises(InvalidInputError):
        rasterize_annotation(Annotation(lesion="MA", shape_kind="circle"), 16)


def test_stack_unions_same_lesion():
    a = polygon("iHE", [(1, 1), (6, 1), (6, 6), (1, 6)])
    b = polygon("iHE", [(4, 4), (10, 4), (10, 10), (4, 10)])
    stack = masks_to_stack([a, b], 12)
    union = rasterize_annotation(a, 12) | rasterize_annotation(b, 12)
    assert stack.shape == (12, 12, VOCABULARY.m)
    assert np.array_equal(stack[:, :, VOCABULARY.index("iHE")], union)


def test_stack_allows_multi_label_pixels():
    region = [(2, 2), (8, 2), (8, 8), (2, 8)]
    stack = masks_to_stack([polygon("HaEx", region), polygon("iHE", region)], 12)
    assert stack[5, 5, VOCABULARY.index("HaEx")] == 1
    assert stack[5, 5, VOCABULARY.index("iHE")] == 1


def test_stack_of_nothing_and_order_invariance():
    assert masks_to_stack([], 8).sum() == 0
    anns = [ellipse("MA", 5, 5, 3, 2), polygon("NV", [(1, 1), (7, 2), (3, 7)]), ellipse("MA", 9, 9, 2, 2)]
    assert np.array_equal(masks_to_stack(anns, 16), masks_to_stack(anns[::-1], 16))


def test_stack_rejects_unknown_lesion():
    with pytest.raises(InvalidInputError):
        masks_to_stack([ellipse("IrMA", 5, 5, 2, 2)], 16)


def test_annotation_dict_form():
    ann = Annotation.from_dict({"lesion": "FiP", "kind": "polygon", "points": [[1, 2], [3, 4], [5, 1]]})
    assert ann.polygon == ((1.0, 2.0), (3.0, 4.0), (5.0, 1.0))
    assert Annotation.from_dict(ann.to_dict()) == ann


def test_count_blobs_uses_eight_connectivity():
    mask = np.zeros((8, 8), dtype=np.uint8)
    mask[1, 1] = mask[2, 2] = 1
    mask[6, 6] = 1
    assert count_blobs(mask) == 2
    assert count_blobs(np.zeros((4, 4), dtype=np.uint8)) == 0
