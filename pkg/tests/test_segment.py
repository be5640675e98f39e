"""Classical segmenters: Otsu, nSD, FWHM, the EM mixture and the
myocardium stand-in."""

import numpy as np
import pytest

from oracles import brute_otsu
from scarquant.errors import DegenerateInputError, InputError
from scarquant.phantom import PhantomSpec, generate_phantom
from scarquant.segment import (
    default_fwhm_seed,
    em_fit,
    em_scar_segment,
    fwhm_threshold,
    import_masks,
    mask_from_labelmap,
    nsd_threshold,
    otsu_threshold,
    phantom_myo_segmenter,
)
from scarquant.volume import write_nifti


def test_otsu_separates_bimodal_extremes():
    v = np.concatenate([np.zeros(50), np.full(50, 255.0)])
    thr = otsu_threshold(v)
    assert 0 < thr < 255
    assert np.count_nonzero(v > thr) == 50


def test_otsu_matches_brute_force():
    rng = np.random.default_rng(8)
    for _ in range(50):
        v = np.concatenate(
            [
                rng.normal(rng.uniform(0, 50), 5, size=rng.integers(20, 200)),
                rng.normal(rng.uniform(100, 200), 20, size=rng.integers(20, 200)),
            ]
        )
        assert otsu_threshold(v) == pytest.approx(brute_otsu(v), abs=0)


def test_otsu_both_classes_nonempty():
    rng = np.random.default_rng(9)
    v = np.concatenate([rng.normal(0, 1, 100), rng.normal(10, 1, 100)])
    thr = otsu_threshold(v)
    assert (v > thr).any() and (v <= thr).any()


def test_otsu_constant_input_errors():
    with pytest.raises(DegenerateInputError):
        otsu_threshold(np.ones(10))


def test_nsd_threshold_arithmetic():
    # remote mean 1.0, population sd 0.1 -> threshold 1.5 at n=5
    img = np.array([[0.9, 1.1, 1.4, 1.6]])
    myo = np.ones_like(img, dtype=bool)
    remote = np.array([[True, True, False, False]])
    mask = nsd_threshold(img, myo, remote, n=5)
    assert mask.tolist() == [[False, False, False, True]]
    # n=0 thresholds at the remote mean
    mask0 = nsd_threshold(img, myo, remote, n=0)
    assert mask0.tolist() == [[False, True, True, True]]


def test_nsd_threshold_validation():
    img = np.ones((1, 4))
    myo = np.ones((1, 4), dtype=bool)
    bad_remote = np.array([[True, False, False, False]])
    with pytest.raises(DegenerateInputError):
        nsd_threshold(img, myo, bad_remote)
    outside = np.array([[True, True, True, True]])
    with pytest.raises(ValueError):
        nsd_threshold(img, np.zeros_like(myo), outside)


def test_nsd_monotone_in_n():
    rng = np.random.default_rng(10)
    img = rng.uniform(0, 2, size=(16, 16))
    myo = np.ones_like(img, dtype=bool)
    remote = img < 1.0
    prev = None
    for n in (0, 1, 2, 3):
        mask = nsd_threshold(img, myo, remote, n=n)
        if prev is not None:
            assert not np.any(mask & ~prev)  # raising n never adds pixels
        prev = mask


def test_fwhm_threshold_arithmetic():
    img = np.array([[0.9, 1.1, 2.0, 0.2]])
    myo = np.ones_like(img, dtype=bool)
    seed = np.array([[False, False, True, False]])
    mask = fwhm_threshold(img, myo, seed)
    assert mask.tolist() == [[False, True, True, False]]
    with pytest.raises(DegenerateInputError):
        fwhm_threshold(img, myo, np.zeros_like(seed))


def test_fwhm_seed_max_is_all_that_matters():
    rng = np.random.default_rng(11)
    img = rng.uniform(0, 1, size=(8, 8))
    img[3, 3] = 2.0
    myo = np.ones_like(img, dtype=bool)
    full_seed = img > 1.0
    single = np.zeros_like(myo)
    single[3, 3] = True
    assert np.array_equal(
        fwhm_threshold(img, myo, full_seed), fwhm_threshold(img, myo, single)
    )


def test_default_fwhm_seed_contains_peak():
    img = np.zeros((10, 10))
    img[4:6, 4:6] = 1.0
    myo = np.ones_like(img, dtype=bool)
    seed = default_fwhm_seed(img, myo)
    assert seed[4, 4] and seed.sum() == 4


def test_em_fit_k1_closed_form():
    rng = np.random.default_rng(12)
    x = rng.normal(3.0, 2.0, size=500)
    mix = em_fit(x, 1)
    assert mix.means[0] == pytest.approx(x.mean(), abs=1e-9)
    assert mix.variances[0] == pytest.approx(x.var(), rel=1e-6)
    assert mix.weights[0] == 1.0


def test_em_fit_two_component_recovery():
    rng = np.random.default_rng(13)
    x = np.concatenate([rng.normal(0, 1, 500), rng.normal(10, 1, 500)])
    mix = em_fit(x, 2, seed=0)
    mu = np.sort(mix.means)
    # oracle: per-true-component sample means
    assert mu[0] == pytest.approx(x[:500].mean(), abs=0.2)
    assert mu[1] == pytest.approx(x[500:].mean(), abs=0.2)


def test_em_fit_log_likelihood_monotone():
    rng = np.random.default_rng(14)
    for trial in range(20):
        x = rng.normal(size=200) + rng.choice([0.0, 5.0], size=200)
        mix = em_fit(x, 2, seed=trial)
        lls = np.asarray(mix.log_likelihoods)
        assert np.all(np.diff(lls) >= -1e-9)


def test_em_fit_determinism_and_validation():
    rng = np.random.default_rng(15)
    x = rng.normal(size=100)
    a = em_fit(x, 2, seed=5)
    b = em_fit(x, 2, seed=5)
    assert np.array_equal(a.means, b.means)
    with pytest.raises(ValueError):
        em_fit(x[:3], 2)
    with pytest.raises(DegenerateInputError):
        em_fit(np.zeros(10), 2)
    with pytest.raises(ValueError):
        em_fit(x, 2, init="bogus")


def test_em_scar_segment_bimodal():
    rng = np.random.default_rng(16)
    img = rng.normal(0.3, 0.02, size=(20, 20))
    scar_true = np.zeros((20, 20), dtype=bool)
    scar_true[5:9, 5:15] = True
    img[scar_true] = rng.normal(0.9, 0.02, size=scar_true.sum())
    myo = np.ones_like(scar_true)
    out = em_scar_segment(img, myo, seed=0)
    assert np.array_equal(out, scar_true)


def test_em_scar_segment_unimodal_is_empty():
    rng = np.random.default_rng(17)
    img = rng.normal(0.5, 0.03, size=(20, 20))
    myo = np.ones((20, 20), dtype=bool)
    assert not em_scar_segment(img, myo, seed=0).any()


def test_em_scar_segment_two_pixels():
    img = np.array([[0.0, 10.0]])
    myo = np.ones_like(img, dtype=bool)
    out = em_scar_segment(img, myo)
    assert out.tolist() == [[False, True]]


def test_phantom_myo_segmenter_noiseless_ring():
    spec = PhantomSpec(nx=128, ny=128, nz=1, inner_radius_mm=18, outer_radius_mm=30)
    subject = generate_phantom(spec)
    wall = subject.labels.data[0] == 2
    mask = phantom_myo_segmenter(subject.image.data[0], seed=0)
    inter = np.count_nonzero(mask & wall)
    dsc = 2 * inter / (mask.sum() + wall.sum())
    assert dsc >= 0.99


def test_phantom_myo_segmenter_blank_slice():
    assert not phantom_myo_segmenter(np.zeros((32, 32))).any()


def test_import_masks_roundtrip(tmp_path):
    spec = PhantomSpec(nx=64, ny=64, nz=2, inner_radius_mm=8, outer_radius_mm=14)
    subject = generate_phantom(spec, subject_id="s1")
    (tmp_path / "s1_myocardium.nii").write_bytes(write_nifti(subject.labels, 2))
    mask = import_masks(tmp_path, subject, "myocardium")
    assert np.array_equal(mask, np.isin(subject.labels.data, (2, 3)))
    with pytest.raises(InputError):
        import_masks(tmp_path, subject, "scar")  # file missing
    with pytest.raises(ValueError):
        import_masks(tmp_path, subject, "bogus")


def test_mask_from_labelmap():
    spec = PhantomSpec(
        nx=64, ny=64, nz=1, inner_radius_mm=8, outer_radius_mm=14,
        scar_theta=(0.0, 1.5),
    )
    subject = generate_phantom(spec)
    wall = mask_from_labelmap(subject.labels, "myocardium")
    scar = mask_from_labelmap(subject.labels, "scar")
    assert np.array_equal(wall, np.isin(subject.labels.data, (2, 3)))
    assert np.array_equal(scar, subject.labels.data == 3)
    assert scar.any() and not np.any(scar & ~wall)
