import json
import re

import numpy as np
import pytest

from litesam.autoppn import build_point_targets
from litesam.dataio import (AnnotationError, RleError, SceneSpec, counts_to_string, load_annotations,
                            make_scene, rasterize_polygon, rle_decode, rle_encode, string_to_counts,
                            tight_box)
from litesam.dataio.images import png_bytes, write_png
from litesam.groups import LARGE, MEDIUM, SMALL, group_of_box


# -- RLE -----------------------------------------------------------------------
def test_rle_trivial_cases():
    assert not rle_decode([12], 3, 4).any()
    assert rle_decode([0, 12], 3, 4).all()
    assert rle_encode(np.zeros((3, 4), bool)) == [12]
    assert rle_encode(np.ones((3, 4), bool)) == [0, 12]


def test_rle_is_column_major():
    m = np.zeros((2, 3), bool)
    m[1, 0] = True  # second pixel in column-major order
    assert rle_encode(m) == [1, 1, 4]


def test_rle_roundtrip_random():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        h, w = rng.integers(1, 33, size=2)
        m = rng.random((h, w)) < rng.random()
        counts = rle_encode(m)
        assert sum(counts) == h * w
        assert np.array_equal(rle_decode(counts, h, w), m)
        s = counts_to_string(counts)
        assert string_to_counts(s) == counts
        assert np.array_equal(rle_decode(s, h, w), m)


def test_rle_sum_mismatch():
    with pytest.raises(RleError):
        rle_decode([3, 4], 3, 3)
    with pytest.raises(RleError):
        rle_decode([-1, 10], 3, 3)


def test_compact_string_known_values():
    assert counts_to_string([4]) == "4"
    assert string_to_counts("4") == [4]
    with pytest.raises(RleError):
        string_to_counts("o")  # continuation bit set with nothing after it


# -- COCO loading --------------------------------------------------------------
def _write(tmp_path, doc):
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(doc))
    return p


def test_empty_annotation_list(tmp_path):
    assert load_annotations(_write(tmp_path, {"images": [], "annotations": []})) == []
    out = load_annotations(_write(tmp_path, {"images": [{"id": 1, "width": 4, "height": 3}],
                                             "annotations": []}))
    assert len(out) == 1 and out[0].masks == []


def test_full_image_rle(tmp_path):
    doc = {"images": [{"id": 7, "width": 5, "height": 4}],
           "annotations": [{"image_id": 7, "segmentation": {"size": [4, 5], "counts": [0, 20]},
                            "bbox": [99, 99, 1, 1]}]}
    (img,) = load_annotations(_write(tmp_path, doc))
    assert len(img.masks) == 1 and img.masks[0].all()
    assert img.boxes[0] == (0, 0, 4, 3)


def test_three_shape_fixture(tmp_path):
    """Rectangle polygon, triangle polygon and a compact-RLE block with hand-computed bounds."""
    h, w = 12, 16
    block = np.zeros((h, w), bool)
    block[8:11, 12:15] = True
    doc = {
        "images": [{"id": 1, "width": w, "height": h}],
        "annotations": [
            {"image_id": 1, "segmentation": [[1, 1, 5, 1, 5, 4, 1, 4]]},
            {"image_id": 1, "segmentation": [[6, 2, 11, 2, 6, 7]]},
            {"image_id": 1, "segmentation": {"size": [h, w], "counts": counts_to_string(rle_encode(block))}},
        ],
    }
    (img,) = load_annotations(_write(tmp_path, doc))
    # pixel centers inside [1,5]x[1,4] are columns 1..4, rows 1..3
    assert img.boxes[0] == (1, 1, 4, 3)
    assert img.masks[0].sum() == 12
    # triangle (6,2)-(11,2)-(6,7): centers (x+.5, y+.5) inside when x >= 6, y >= 2, x + y <= 11
    assert img.boxes[1] == (6, 2, 9, 5)
    assert img.masks[1].sum() == 4 + 3 + 2 + 1
    assert img.boxes[2] == (12, 8, 14, 10)


def test_polygon_even_odd():
    # a square with a square hole drawn as one self-overlapping path
    outer = [0, 0, 8, 0, 8, 8, 0, 8]
    m = rasterize_polygon(outer, 8, 8) ^ rasterize_polygon([2, 2, 6, 2, 6, 6, 2, 6], 8, 8)
    assert m.sum() == 64 - 16 and not m[3, 3]


@pytest.mark.parametrize("doc,where", [
    ({"images": [{"id": 1, "width": 4}], "annotations": []}, "images[0]"),
    ({"images": [{"id": 1, "width": 4, "height": 4}], "annotations": [{"image_id": 2, "segmentation": []}]},
     "annotations[0]"),
    ({"images": [{"id": 1, "width": 4, "height": 4}],
      "annotations": [{"image_id": 1, "segmentation": [[0, 0, 1, 1]]}, {"image_id": 1}]}, "annotations[0]"),
    ({"images": [{"id": 1, "width": 4, "height": 4}],
      "annotations": [{"image_id": 1, "segmentation": [[0, 0, 3, 0, 3, 3]]},
                      {"image_id": 1, "segmentation": {"size": [4, 4], "counts": [3, 3]}}]}, "annotations[1]"),
])
def test_load_errors_name_the_record(tmp_path, doc, where):
    with pytest.raises(AnnotationError, match=re.escape(where)):
        load_annotations(_write(tmp_path, doc))


def test_crowd_becomes_unlabeled_and_images_load(tmp_path):
    img = np.zeros((4, 4, 3), np.uint8)
    write_png(tmp_path / "a.png", img)
    doc = {"images": [{"id": 1, "width": 4, "height": 4, "file_name": "a.png"}],
           "annotations": [{"image_id": 1, "iscrowd": 1, "segmentation": {"size": [4, 4], "counts": [0, 16]}}]}
    (rec,) = load_annotations(_write(tmp_path, doc), tmp_path)
    assert rec.unlabeled.all() and rec.masks == [] and rec.image.shape == (4, 4, 3)


# -- tight boxes ---------------------------------------------------------------
def test_tight_box_single_pixel_flips_enlarge():
    rng = np.random.default_rng(1)
    for _ in range(200):
        h, w = rng.integers(3, 20, size=2)
        m = np.zeros((h, w), bool)
        y0, x0 = rng.integers(0, h - 1), rng.integers(0, w - 1)
        m[y0 : rng.integers(y0 + 1, h), x0 : rng.integers(x0 + 1, w)] = True
        box = tight_box(m)
        ys, xs = np.nonzero(m)
        assert box == (xs.min(), ys.min(), xs.max(), ys.max())
        outside = [(y, x) for y in range(h) for x in range(w)
                   if not (box[0] <= x <= box[2] and box[1] <= y <= box[3])]
        if not outside:
            continue
        y, x = outside[rng.integers(len(outside))]
        m2 = m.copy()
        m2[y, x] = True
        b2 = tight_box(m2)
        area = lambda b: (b[2] - b[0] + 1) * (b[3] - b[1] + 1)
        assert area(b2) > area(box)
        assert b2[0] <= box[0] and b2[1] <= box[1] and b2[2] >= box[2] and b2[3] >= box[3]


# -- synthetic scenes ----------------------------------------------------------
def test_scene_determinism():
    for seed in range(5):
        a, b = make_scene(SceneSpec(seed=seed)), make_scene(SceneSpec(seed=seed))
        assert np.array_equal(a.image, b.image)
        assert all(np.array_equal(u, v) for u, v in zip(a.masks, b.masks))
        assert png_bytes(a.image) == png_bytes(b.image)


@pytest.mark.parametrize("size", [128, 640])
def test_three_objects_cover_all_groups(size):
    for seed in range(20):
        s = make_scene(SceneSpec(seed=seed, size=size, min_count=3, max_count=3))
        groups = sorted(group_of_box(b, size, size) for b in s.boxes)
        assert groups == [LARGE, MEDIUM, SMALL]


def test_nested_policy_contains_a_mask():
    for seed in range(10):
        s = make_scene(SceneSpec(seed=seed, overlap="nested"))
        assert any(not (s.masks[j] & ~s.masks[i]).any()
                   for i in range(len(s.masks)) for j in range(len(s.masks)) if i != j)


def test_every_scene_builds_valid_targets():
    for seed in range(30):
        s = make_scene(SceneSpec(seed=seed, unlabeled=seed % 2 == 0, overlap=("random", "nested", "disjoint")[seed % 3]))
        t = build_point_targets(s, (s.height // 16, s.width // 16))
        assert t.point_heat.min() >= 0 and t.point_heat.max() <= 1
        assert (t.box_reg[:, t.any_pos] >= 0).all()
        assert (t.pos_mask.sum(0) <= 1).all()
