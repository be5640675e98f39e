"""Label augmentation, procedural synthesis and the bbox-training
augmentation sampler."""

import numpy as np
import pytest

from scarquant.bbox import BoundingBox
from scarquant.phantom import PhantomSpec, generate_phantom
from scarquant.qc import connected_components
from scarquant.synthesis import (
    AffineParams,
    BboxAugSpec,
    LabelAugSpec,
    SynthesisRequest,
    apply_affine,
    apply_label_aug,
    augment_for_bbox,
    derive_seed,
    elastic_deform,
    emit_dataset,
    morph,
    rotate_labels,
    sample_bbox_params,
    swap_label_style,
    synthesize_image,
)


def phantom_subject(scar=True, seed=0, subject_id="p"):
    spec = PhantomSpec(
        nx=96, ny=96, nz=2, inner_radius_mm=14, outer_radius_mm=24,
        scar_theta=(0.0, 1.6) if scar else None, noise_sigma=0.01, seed=seed,
    )
    return generate_phantom(spec, subject_id=subject_id)


def test_rotate_labels_identity_and_involution():
    labels = phantom_subject().labels.data[0]
    assert np.array_equal(rotate_labels(labels, 0), labels)
    assert np.array_equal(rotate_labels(rotate_labels(labels, 180), 180), labels)
    with pytest.raises(ValueError):
        rotate_labels(labels, 45)


def test_rotate_labels_preserves_counts_roughly():
    labels = phantom_subject().labels.data[0]
    rotated = rotate_labels(labels, 60)
    assert set(np.unique(rotated)) <= set(np.unique(labels))
    for cls in (1, 2, 3):
        n0 = np.count_nonzero(labels == cls)
        n1 = np.count_nonzero(rotated == cls)
        assert abs(n1 - n0) < 0.05 * n0


def test_elastic_deform_properties():
    labels = phantom_subject().labels.data[0]
    assert np.array_equal(elastic_deform(labels, alpha=0, seed=1), labels)
    a = elastic_deform(labels, seed=2)
    b = elastic_deform(labels, seed=2)
    assert np.array_equal(a, b)
    assert set(np.unique(a)) <= set(np.unique(labels))
    with pytest.raises(ValueError):
        elastic_deform(labels, alpha=-1)
    with pytest.raises(ValueError):
        elastic_deform(labels, sigma=0)


def test_elastic_deform_usually_keeps_wall_connected():
    labels = phantom_subject().labels.data[0]
    ok = 0
    for seed in range(50):
        out = elastic_deform(labels, seed=seed)
        wall = np.isin(out, (2, 3))
        if connected_components(wall, 8).n_components == 1:
            ok += 1
    assert ok >= 45  # >= 90% of seeds


def test_morph_scar_stays_in_wall():
    labels = phantom_subject().labels.data[0]
    wall_before = np.isin(labels, (2, 3))
    for op in ("dilate", "open"):
        out = morph(labels, op, radius=1)
        wall_after = np.isin(out, (2, 3))
        assert np.array_equal(wall_before, wall_after)
        assert not np.any((out == 3) & ~wall_before)
    dilated = morph(labels, "dilate", 1)
    assert np.count_nonzero(dilated == 3) >= np.count_nonzero(labels == 3)
    with pytest.raises(ValueError):
        morph(labels, "dilate", 0)
    with pytest.raises(ValueError):
        morph(labels, "erode", 1)


def test_morph_open_removes_thin_line():
    labels = np.full((20, 20), 2, dtype=np.int16)
    labels[10, 2:18] = 3  # 1-px-wide scar line
    out = morph(labels, "open", 1)
    assert not np.any(out == 3)
    assert np.all(out == 2)


def test_apply_label_aug_deterministic():
    labels = phantom_subject().labels
    spec = LabelAugSpec(rotation_deg=120, elastic_seed=9, morph_op="dilate")
    a = apply_label_aug(labels, spec)
    b = apply_label_aug(labels, spec)
    assert np.array_equal(a.data, b.data)
    with pytest.raises(ValueError):
        LabelAugSpec(rotation_deg=30)
    with pytest.raises(ValueError):
        LabelAugSpec(morph_op="shrink")


def test_swap_label_style_contract():
    path = phantom_subject(scar=True, subject_id="sick")
    normal = phantom_subject(scar=False, seed=1, subject_id="well")
    req = swap_label_style(path, normal)
    assert req.stage == "myocardium"
    assert req.labels is path.labels
    assert req.style is normal
    req2 = swap_label_style(normal, path)
    assert req2.stage == "myocardium"
    with pytest.warns(UserWarning):
        swap_label_style(path, phantom_subject(scar=True, seed=2, subject_id="p2"))
    bare = phantom_subject(scar=False, seed=3, subject_id="bare")
    bare.labels = None
    with pytest.raises(ValueError):
        swap_label_style(bare, normal)


def test_synthesize_image_class_means():
    subject = phantom_subject()
    req = SynthesisRequest("out", subject.labels, subject, "scar")
    img = synthesize_image(req, blend_sigma=0.0, noise_sigma=0.0)
    for cls in np.unique(subject.labels.data):
        style_mean = subject.image.data[subject.labels.data == cls].mean()
        synth_mean = img.data[subject.labels.data == cls].mean()
        assert synth_mean == pytest.approx(style_mean, abs=1e-5)


def test_synthesize_image_defaults_and_determinism():
    subject = phantom_subject()
    req = SynthesisRequest("out", subject.labels, subject, "scar")
    a = synthesize_image(req, seed=4)
    b = synthesize_image(req, seed=4)
    assert np.array_equal(a.data, b.data)
    for cls in np.unique(subject.labels.data):
        style_mean = subject.image.data[subject.labels.data == cls].mean()
        synth_mean = a.data[subject.labels.data == cls].mean()
        assert abs(synth_mean - style_mean) <= 0.1 * abs(style_mean) + 0.05


def test_synthesize_image_missing_class_warns():
    path = phantom_subject(scar=True)
    normal = phantom_subject(scar=False, seed=1, subject_id="n")
    req = SynthesisRequest("out", path.labels, normal, "myocardium")
    with pytest.warns(UserWarning):
        synthesize_image(req, seed=0)


def test_sample_bbox_params_ranges():
    spec = BboxAugSpec()
    for seed in range(100):
        p, photo = sample_bbox_params(spec, seed)
        assert -20 <= p.shear_deg <= 20
        assert -90 <= p.rotation_deg <= 90
        assert 0.14 <= abs(p.tx_frac) <= 0.21
        assert 0.14 <= abs(p.ty_frac) <= 0.21
        assert 0.5 <= p.scale <= 1.5
        assert photo["noise_mu"] == 0.1 and photo["noise_sigma"] == 0.1
        assert photo["blur_sigma"] == 1.5


def test_augment_for_bbox_identity_spec():
    img = phantom_subject().image.data[0]
    box = BoundingBox(48, 48, 50, 50)
    out, obox = augment_for_bbox(img, box, BboxAugSpec.identity(), seed=0)
    assert np.array_equal(out, img)
    assert obox == box


def test_apply_affine_pure_translation():
    img = np.zeros((256, 256))
    img[100:120, 100:120] = 1.0
    box = BoundingBox(110, 110, 20, 20)
    _, moved = apply_affine(img, box, AffineParams(tx_frac=0.2, ty_frac=0.0))
    assert moved.cx == pytest.approx(110 + 51.2)
    assert moved.cy == pytest.approx(110)
    assert moved.w == pytest.approx(20)


def test_augment_for_bbox_moves_image_with_box():
    img = np.zeros((128, 128))
    img[60:70, 60:70] = 1.0
    box = BoundingBox(65, 65, 10, 10)
    out, obox = augment_for_bbox(
        img, box, BboxAugSpec(noise_mu=None, blur_sigma=None), seed=7
    )
    rows, cols = np.nonzero(out > 0.5)
    assert abs(rows.mean() - obox.cy) < 2
    assert abs(cols.mean() - obox.cx) < 2


def test_emit_dataset_deterministic(tmp_path):
    subject = phantom_subject()
    spec = LabelAugSpec(rotation_deg=60, elastic_seed=1)
    req = SynthesisRequest(
        "p_aug0", apply_label_aug(subject.labels, spec), subject, "scar",
        aug=spec, source_subject="p",
    )
    d1 = tmp_path / "a"
    d2 = tmp_path / "b"
    rows1 = emit_dataset([req], d1, root_seed=3)
    rows2 = emit_dataset([req], d2, root_seed=3)
    assert rows1 == rows2
    for name in ("p_aug0.nii", "p_aug0_gt.nii", "manifest.csv"):
        assert (d1 / name).read_bytes() == (d2 / name).read_bytes()
    assert (d1 / "manifest.csv").read_text().count("\n") == 2  # header + 1 row
    assert derive_seed(3, 0) == derive_seed(3, 0)
    assert derive_seed(3, 0) != derive_seed(3, 1)


def test_emit_dataset_empty(tmp_path):
    rows = emit_dataset([], tmp_path / "empty")
    assert rows == []
    assert (tmp_path / "empty" / "manifest.csv").exists()
