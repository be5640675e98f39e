"""Bounding-box geometry, the transform encoding and the stand-in
regressor."""

import numpy as np
import pytest

from scarquant.bbox import (
    IDENTITY_TRANSFORM,
    BoundingBox,
    BoxTransform,
    apply_transform,
    encode_transform,
    gt_box_from_labels,
    heuristic_regressor,
    iou,
    load_box_predictions,
    proposal_box,
    select_reference_slice,
)
from scarquant.errors import InputError
from scarquant.phantom import PhantomSpec, generate_phantom
from scarquant.volume import LabelMap, Spacing


def test_box_invariants():
    with pytest.raises(ValueError):
        BoundingBox(0, 0, -1, 5)
    with pytest.raises(ValueError):
        BoxTransform(0, 0, 0, 1)
    b = BoundingBox(10, 20, 4, 6)
    assert (b.x0, b.y0, b.x1, b.y1) == (8, 17, 12, 23)


def test_proposal_box_sizes():
    b = proposal_box(256, 256)
    assert (b.cx, b.cy, b.w, b.h) == (128, 128, 134, 134)
    assert proposal_box(300, 300).cx == 150
    assert apply_transform(b, IDENTITY_TRANSFORM) == b


def test_encode_transform_by_definition():
    prop = BoundingBox(128, 128, 134, 134)
    target = BoundingBox(120, 140, 100, 160)
    t = encode_transform(prop, target)
    assert t == BoxTransform(-8, 12, 100 / 134, 160 / 134)
    assert encode_transform(prop, prop) == BoxTransform(0, 0, 1, 1)


def test_gt_box_margins():
    data = np.zeros((1, 256, 256), dtype=np.int16)
    data[0, 40:81, 50:91] = 2
    lab = LabelMap(data, Spacing(1, 1, 1))
    tight = gt_box_from_labels(lab, margin=0.0)
    assert (tight.y0, tight.y1, tight.x0, tight.x1) == (40, 81, 50, 91)
    grown = gt_box_from_labels(lab, margin=0.10)
    assert grown.w == pytest.approx(41 * 1.2)
    assert grown.h == pytest.approx(41 * 1.2)
    assert grown.cx == tight.cx and grown.cy == tight.cy


def test_gt_box_contains_all_lv_voxels():
    spec = PhantomSpec(scar_theta=(0.0, 1.0), seed=1)
    subject = generate_phantom(spec)
    box = gt_box_from_labels(subject.labels)
    lv = np.isin(subject.labels.data, (1, 2))
    _, rows, cols = np.nonzero(lv)
    assert rows.min() >= box.y0 and rows.max() < box.y1
    assert cols.min() >= box.x0 and cols.max() < box.x1


def test_gt_box_requires_lv():
    lab = LabelMap(np.zeros((1, 8, 8), dtype=np.int16), Spacing(1, 1, 1))
    with pytest.raises(ValueError):
        gt_box_from_labels(lab)


def test_select_reference_slice():
    assert select_reference_slice(7) == 1
    assert select_reference_slice(2) == 1
    with pytest.warns(UserWarning):
        assert select_reference_slice(1) == 0
    with pytest.raises(ValueError):
        select_reference_slice(0)


def _bright_ring_slice(cr=128, cc=128):
    yy, xx = np.mgrid[:256, :256]
    rho = np.hypot(yy - cr, xx - cc)
    img = np.zeros((256, 256))
    img[(rho >= 18) & (rho < 30)] = 1.0
    img[rho < 18] = 0.9
    return img


def test_heuristic_regressor_contains_ring():
    img = _bright_ring_slice()
    t = heuristic_regressor(img)
    box = apply_transform(proposal_box(256, 256), t)
    bright = img > 0.5
    rows, cols = np.nonzero(bright)
    inside = (
        (rows >= box.y0) & (rows < box.y1) & (cols >= box.x0) & (cols < box.x1)
    )
    assert inside.mean() >= 0.99


def test_heuristic_regressor_blank_slice_identity():
    with pytest.warns(UserWarning):
        assert heuristic_regressor(np.zeros((256, 256))) == IDENTITY_TRANSFORM


def test_heuristic_regressor_translation_equivariant():
    t0 = heuristic_regressor(_bright_ring_slice(128, 128))
    t1 = heuristic_regressor(_bright_ring_slice(128 + 9, 128 - 6))
    assert t1.dx - t0.dx == pytest.approx(-6)
    assert t1.dy - t0.dy == pytest.approx(9)
    assert t1.sx == pytest.approx(t0.sx)
    assert t1.sy == pytest.approx(t0.sy)


def test_heuristic_regressor_prefers_central_component():
    img = _bright_ring_slice()
    img[4:16, :] = 1.0  # a bright edge band larger than the ring
    t = heuristic_regressor(img)
    box = apply_transform(proposal_box(256, 256), t)
    assert abs(box.cy - 128) < 10 and abs(box.cx - 128) < 10


def test_iou_cases():
    a = BoundingBox(0.5, 0.5, 1, 1)
    assert iou(a, a) == 1.0
    assert iou(a, BoundingBox(5, 5, 1, 1)) == 0.0
    shifted = BoundingBox(1.0, 0.5, 1, 1)
    assert iou(a, shifted) == pytest.approx(1 / 3)


def test_load_box_predictions(tmp_path):
    p = tmp_path / "boxes.csv"
    p.write_text("subject_id,dx,dy,sx,sy\ns1,1.5,-2,0.9,1.1\n")
    preds = load_box_predictions(p)
    assert preds["s1"] == BoxTransform(1.5, -2.0, 0.9, 1.1)
    with pytest.raises(InputError):
        load_box_predictions(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,dx\ns1,1\n")
    with pytest.raises(InputError):
        load_box_predictions(bad)
