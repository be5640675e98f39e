"""Normalization, crop/pad, resampling and scar-stage masking."""

import numpy as np
import pytest

from oracles import sorted_percentile
from scarquant.errors import DegenerateInputError
from scarquant.preprocess import (
    CAVITY_FILL_VALUE,
    NormParams,
    crop_at_centroid,
    crop_or_pad,
    extract_window,
    mask_for_scar,
    percentile_normalize,
    resample,
    uncrop_mask,
)


def test_norm_params_validation():
    with pytest.raises(ValueError):
        NormParams(95, 5)
    with pytest.raises(ValueError):
        NormParams(-1, 50)


def test_percentile_normalize_arithmetic():
    a = np.arange(101, dtype=np.float64).reshape(1, 101)
    out = percentile_normalize(a)
    # P5 = 5, P95 = 95 on 0..100
    assert out[0, 50] == pytest.approx((50 - 5) / 90)
    assert out[0, 100] == 1.0  # clamped
    assert out[0, 0] == 0.0


def test_percentile_normalize_matches_sort_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a = rng.normal(size=(17, 23))
        lo = sorted_percentile(a, 5)
        hi = sorted_percentile(a, 95)
        out = percentile_normalize(a)
        expected = np.clip((a - lo) / (hi - lo), 0, 1)
        assert np.allclose(out, expected, atol=1e-12)
        assert out.min() >= 0 and out.max() <= 1


def test_percentile_normalize_affine_invariant():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(20, 20))
    assert np.allclose(
        percentile_normalize(a), percentile_normalize(3.7 * a + 11.0), atol=1e-9
    )


def test_percentile_normalize_constant_slice_errors():
    with pytest.raises(DegenerateInputError):
        percentile_normalize(np.ones((8, 8)))


def test_crop_or_pad_cases():
    big = np.arange(300 * 300, dtype=np.float64).reshape(300, 300)
    out = crop_or_pad(big, 256)
    assert out.shape == (256, 256)
    assert np.array_equal(out, big[22:278, 22:278])

    small = np.ones((200, 200))
    out = crop_or_pad(small, 256)
    assert out.shape == (256, 256)
    assert out[:28].sum() == 0 and out[-28:].sum() == 0
    assert out[28:228, 28:228].sum() == 200 * 200

    same = np.random.default_rng(0).normal(size=(256, 256))
    assert np.array_equal(crop_or_pad(same, 256), same)


def test_crop_or_pad_odd_difference_pads_high_side():
    a = np.ones((5, 5))
    out = crop_or_pad(a, 8)
    # 3-pixel pad: 1 low, 2 high
    assert out[0].sum() == 0
    assert out[1, 1] == 1
    assert out[6].sum() == 0 and out[5].sum() == 5


def test_crop_then_pad_recovers_interior():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(300, 300))
    back = crop_or_pad(crop_or_pad(a, 256), 300)
    assert np.array_equal(back[22:278, 22:278], a[22:278, 22:278])


def test_crop_or_pad_rejects_odd_target():
    with pytest.raises(ValueError):
        crop_or_pad(np.ones((4, 4)), 5)


def test_resample_identity_and_constant():
    a = np.random.default_rng(4).normal(size=(32, 32))
    assert np.array_equal(resample(a, 32, 32), a)
    const = np.full((16, 16), 3.25)
    assert np.allclose(resample(const, 32, 32), 3.25)


def test_resample_nearest_preserves_value_set():
    labels = np.random.default_rng(5).integers(0, 4, size=(20, 20))
    out = resample(labels, 37, 11, mode="nearest")
    assert set(np.unique(out)) <= set(np.unique(labels))
    assert out.dtype == labels.dtype


def test_resample_rejects_bad_args():
    with pytest.raises(ValueError):
        resample(np.ones((4, 4)), 0, 4)
    with pytest.raises(ValueError):
        resample(np.ones((4, 4)), 4, 4, mode="cubic")


def test_crop_at_centroid_single_pixel():
    a = np.zeros((128, 128))
    mask = np.zeros((128, 128), dtype=bool)
    mask[40, 40] = True
    _, (r0, c0) = crop_at_centroid(a, mask, 64)
    assert (r0, c0) == (8, 8)  # window rows/cols 8..71


def test_crop_at_centroid_symmetric_ring():
    yy, xx = np.mgrid[:128, :128]
    rho = np.hypot(yy - 64, xx - 64)
    ring = (rho >= 10) & (rho < 16)
    _, (r0, c0) = crop_at_centroid(np.zeros((128, 128)), ring, 64)
    assert (r0, c0) == (32, 32)


def test_crop_at_centroid_roundtrip_near_border():
    rng = np.random.default_rng(6)
    for _ in range(20):
        mask = np.zeros((60, 60), dtype=bool)
        r, c = rng.integers(0, 60, size=2)
        mask[r, c] = True
        a = rng.normal(size=(60, 60))
        window, offset = crop_at_centroid(a, mask, 64)
        win_mask = extract_window(mask.astype(np.uint8), offset, 64) > 0
        assert np.array_equal(uncrop_mask(win_mask, offset, mask.shape), mask)
        wr, wc = np.nonzero(win_mask)
        assert window[wr[0], wc[0]] == a[r, c]


def test_crop_at_centroid_empty_mask_errors():
    with pytest.raises(DegenerateInputError):
        crop_at_centroid(np.zeros((8, 8)), np.zeros((8, 8), dtype=bool), 4)


def test_mask_for_scar_values():
    rng = np.random.default_rng(7)
    a = rng.uniform(0, 10, size=(40, 40))
    myo = np.zeros((40, 40), dtype=bool)
    myo[10:30, 10:30] = True
    cav = np.zeros_like(myo)
    cav[15:25, 15:25] = True
    myo &= ~cav
    out = mask_for_scar(a, myo, cav)
    assert np.all(out[cav] == CAVITY_FILL_VALUE)
    assert np.all(out[~myo & ~cav] == 0)
    assert out[myo].min() >= 0 and out[myo].max() <= 1
    # normalization uses myocardium pixels only
    lo = sorted_percentile(a[myo], 5)
    hi = sorted_percentile(a[myo], 95)
    assert np.allclose(out[myo], np.clip((a[myo] - lo) / (hi - lo), 0, 1))


def test_mask_for_scar_rejects_overlap_and_empty():
    a = np.ones((8, 8))
    myo = np.zeros((8, 8), dtype=bool)
    myo[2, 2] = True
    with pytest.raises(ValueError):
        mask_for_scar(a, myo, myo)
    with pytest.raises(DegenerateInputError):
        mask_for_scar(a, np.zeros_like(myo), np.zeros_like(myo))
