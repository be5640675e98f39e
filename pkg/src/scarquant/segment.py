"""Classical scar/myocardium segmenters: Otsu, nSD, FWHM and a 1D
Gaussian-mixture EM, plus an external-mask importer and an EM-based
myocardium stand-in for the learned stage."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError, InputError
from .volume import LabelMap, SubjectRecord, read_nifti

OTSU_BINS = 256


def otsu_threshold(values) -> float:
    """Between-class-variance maximizing threshold over a 256-bin
    histogram of the value range; ties resolved toward the lowest
    threshold. The score comparison is done in exact integer arithmetic
    so the result never depends on float summation order."""
    v = np.asarray(values, dtype=np.float64).ravel()
    vmin, vmax = float(v.min()), float(v.max())
    if vmax <= vmin:
        raise DegenerateInputError("constant input, no threshold exists")
    idx = np.minimum(
        ((v - vmin) / (vmax - vmin) * OTSU_BINS).astype(np.int64), OTSU_BINS - 1
    )
    hist = np.bincount(idx, minlength=OTSU_BINS)
    n_total = int(hist.sum())
    s_total = int(np.dot(np.arange(OTSU_BINS), hist))

    best_k = -1
    best_num, best_den = -1, 1  # score = num/den, exact rationals
    w0 = s0 = 0
    for k in range(OTSU_BINS - 1):
        w0 += int(hist[k])
        s0 += k * int(hist[k])
        w1 = n_total - w0
        if w0 == 0 or w1 == 0:
            continue
        num = (s0 * w1 - (s_total - s0) * w0) ** 2
        den = w0 * w1
        if num * best_den > best_num * den:
            best_num, best_den, best_k = num, den, k
    if best_k < 0:
        raise DegenerateInputError("degenerate histogram")
    return vmin + (best_k + 1) * (vmax - vmin) / OTSU_BINS


def nsd_threshold(
    slice_2d: np.ndarray,
    myo_mask: np.ndarray,
    remote_mask: np.ndarray,
    n: float = 5.0,
) -> np.ndarray:
    """Scar = myocardium pixels above mean + n * sd (population sd) of
    the remote normal-myocardium region."""
    myo = np.asarray(myo_mask, dtype=bool)
    remote = np.asarray(remote_mask, dtype=bool)
    if np.any(remote & ~myo):
        raise ValueError("remote region must lie within the myocardium")
    a = np.asarray(slice_2d, dtype=np.float64)
    rv = a[remote]
    if rv.size < 2:
        raise DegenerateInputError("remote region needs at least 2 pixels")
    thr = rv.mean() + n * rv.std()
    return myo & (a > thr)


def fwhm_threshold(
    slice_2d: np.ndarray, myo_mask: np.ndarray, seed_mask: np.ndarray
) -> np.ndarray:
    """Scar = myocardium pixels at or above half the maximum of the
    scar seed region."""
    myo = np.asarray(myo_mask, dtype=bool)
    seed = np.asarray(seed_mask, dtype=bool)
    sv = np.asarray(slice_2d, dtype=np.float64)[seed]
    if sv.size == 0:
        raise DegenerateInputError("empty scar seed region")
    return myo & (np.asarray(slice_2d, dtype=np.float64) >= 0.5 * sv.max())


def default_fwhm_seed(slice_2d: np.ndarray, myo_mask: np.ndarray) -> np.ndarray:
    """Default seed: the 8-connected bright region around the brightest
    myocardium pixel (pixels within 80% of its intensity)."""
    from . import qc

    myo = np.asarray(myo_mask, dtype=bool)
    if not myo.any():
        raise DegenerateInputError("empty myocardium mask")
    a = np.asarray(slice_2d, dtype=np.float64)
    peak = a[myo].max()
    bright = myo & (a >= 0.8 * peak)
    comps = qc.connected_components(bright, connectivity=8)
    masked = np.where(myo, a, -np.inf)
    pr, pc = np.unravel_index(np.argmax(masked), a.shape)
    return comps.label_grid == comps.label_grid[pr, pc]


@dataclass(frozen=True)
class Mixture1D:
    """1D Gaussian mixture: weights sum to 1, variances positive."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihoods: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be positive")

    @property
    def k(self) -> int:
        return len(self.means)


def _log_gauss(x, mu, var):
    return -0.5 * (np.log(2 * np.pi * var) + (x - mu) ** 2 / var)


def _weighted_log_pdf(x, w, mu, var):
    return _log_gauss(x[:, None], mu[None, :], var[None, :]) + np.log(w)[None, :]


def _log_likelihood(x, w, mu, var):
    lg = _weighted_log_pdf(x, w, mu, var)
    m = lg.max(axis=1)
    return float(np.sum(m + np.log(np.sum(np.exp(lg - m[:, None]), axis=1))))


def em_fit(
    values,
    k: int,
    max_iter: int = 200,
    tol: float = 1e-6,
    seed: int | None = None,
    init: str = "quantile",
) -> Mixture1D:
    """Fit a k-component 1D Gaussian mixture by EM.

    Deterministic: means start at the k mid-quantiles (or spread evenly
    over the range when quantiles collide), variance pooled, weights
    uniform. seed only matters for init='random'. Variances are floored
    at 1e-8 * range^2.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2 * k:
        raise ValueError(f"need at least {2 * k} values to fit {k} components")
    rng = float(x.max() - x.min())
    if rng == 0:
        raise DegenerateInputError("all values equal")
    var_floor = 1e-8 * rng * rng

    if init == "quantile":
        mu = np.quantile(x, (np.arange(k) + 0.5) / k)
        if np.any(np.diff(mu) < 1e-12 * rng):
            mu = x.min() + (np.arange(k) + 0.5) / k * rng
    elif init == "spread":
        mu = x.min() + (np.arange(k) + 0.5) / k * rng
    elif init == "random":
        mu = np.random.default_rng(seed).choice(x, size=k, replace=False)
        mu.sort()
    else:
        raise ValueError(f"unknown init {init!r}")
    var = np.full(k, max(float(np.var(x)), var_floor))
    w = np.full(k, 1.0 / k)

    lls = [_log_likelihood(x, w, mu, var)]
    for _ in range(max_iter):
        # E-step
        lg = _weighted_log_pdf(x, w, mu, var)
        m = lg.max(axis=1, keepdims=True)
        resp = np.exp(lg - m)
        resp /= resp.sum(axis=1, keepdims=True)
        # M-step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-300)
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = (resp * (x[:, None] - mu[None, :]) ** 2).sum(axis=0) / nk
        var = np.maximum(var, var_floor)
        w = nk / x.size
        w /= w.sum()
        lls.append(_log_likelihood(x, w, mu, var))
        if lls[-1] - lls[-2] < tol:
            break
    return Mixture1D(w, mu, var, lls)


def _posteriors(x: np.ndarray, mix: Mixture1D) -> np.ndarray:
    lg = _log_gauss(x[:, None], mix.means[None, :], mix.variances[None, :])
    lg = lg + np.log(mix.weights)[None, :]
    lg -= lg.max(axis=1, keepdims=True)
    p = np.exp(lg)
    return p / p.sum(axis=1, keepdims=True)


def em_scar_segment(
    slice_2d: np.ndarray, myo_mask: np.ndarray, seed: int | None = None
) -> np.ndarray:
    """Scar via a 2-component mixture over myocardium intensities.

    Scar = pixels whose posterior for the higher-mean component exceeds
    0.5. Returns an empty mask when the bright component carries
    negligible weight (< 0.01) or when a single Gaussian explains the
    intensities at least as well (BIC), i.e. there is no bimodality to
    call scar.
    """
    myo = np.asarray(myo_mask, dtype=bool)
    if not myo.any():
        raise DegenerateInputError("empty myocardium mask")
    a = np.asarray(slice_2d, dtype=np.float64)
    vals = a[myo]
    empty = np.zeros_like(myo)
    if vals.max() <= vals.min():
        return empty
    if vals.size < 4:
        # too few pixels to fit a mixture: flag pixels above the mean
        out = empty.copy()
        out[myo] = vals > vals.mean()
        return out
    mix2 = em_fit(vals, 2, seed=seed)
    hi = int(np.argmax(mix2.means))
    if mix2.weights[hi] < 0.01:
        return empty
    mix1 = em_fit(vals, 1, seed=seed)
    n = vals.size
    bic2 = 5 * np.log(n) - 2 * mix2.log_likelihoods[-1]
    bic1 = 2 * np.log(n) - 2 * mix1.log_likelihoods[-1]
    if bic1 <= bic2:
        return empty
    post = _posteriors(vals, mix2)[:, hi]
    out = empty.copy()
    out[myo] = post > 0.5
    return out


def phantom_myo_segmenter(slice_2d: np.ndarray, seed: int | None = None) -> np.ndarray:
    """Classical stand-in for the learned myocardium stage.

    Clusters intensities into 3 components (background / wall / bright
    blood-and-scar), takes the largest component of the non-background
    clusters and removes the central bright blob (the cavity). The
    returned wall mask includes any scar tissue.
    """
    from . import qc

    a = np.asarray(slice_2d, dtype=np.float64)
    empty = np.zeros(a.shape, dtype=bool)
    if a.max() <= a.min():
        return empty
    flat = a.ravel()
    # clustering does not need every pixel: fit on a seeded subsample,
    # then assign all pixels by posterior
    fit_vals = flat
    if flat.size > 6000:
        rng = np.random.default_rng(0 if seed is None else seed)
        fit_vals = rng.choice(flat, size=6000, replace=False)
    try:
        mix = em_fit(fit_vals, 3, max_iter=60, tol=1e-3, seed=seed, init="spread")
    except (DegenerateInputError, ValueError):
        return empty
    assign = np.argmax(_posteriors(flat, mix), axis=1).reshape(a.shape)
    order = np.argsort(mix.means)  # low -> high
    mid_or_high = np.isin(assign, order[1:])
    high = assign == order[2]

    comps = qc.connected_components(mid_or_high, connectivity=8)
    if comps.n_components == 0:
        return empty
    disk = comps.label_grid == (int(np.argmax(comps.sizes)) + 1)
    disk = ndimage.binary_fill_holes(disk)

    # cavity = bright component inside the disk, closest to image center
    hc = qc.connected_components(high & disk, connectivity=8)
    cr, cc = (a.shape[0] - 1) / 2.0, (a.shape[1] - 1) / 2.0
    best, best_d = None, np.inf
    for cid in range(1, hc.n_components + 1):
        rows, cols = np.nonzero(hc.label_grid == cid)
        d = (rows.mean() - cr) ** 2 + (cols.mean() - cc) ** 2
        if d < best_d:
            best, best_d = cid, d
    cavity = empty
    if best is not None:
        cavity = ndimage.binary_fill_holes(hc.label_grid == best)
    wall = disk & ~cavity
    # seal single-pixel breaks that noise opens in the rim, then drop
    # satellite fragments
    wall = ndimage.binary_closing(wall, structure=np.ones((3, 3), bool)) & ~cavity
    wc = qc.connected_components(wall, connectivity=8)
    if wc.n_components > 1:
        wall = wc.label_grid == (int(np.argmax(wc.sizes)) + 1)
    return wall


def import_masks(path, subject: SubjectRecord, stage: str) -> np.ndarray:
    """Load an externally predicted mask <subject_id>_<stage>.nii.

    stage 'myocardium' returns the full wall (classes 2 and 3) so that
    ground-truth labels imported as predictions reproduce the wall
    exactly; stage 'scar' returns class 3.
    """
    if stage not in ("myocardium", "scar"):
        raise ValueError(f"unknown stage {stage!r}")
    fname = os.path.join(path, f"{subject.id}_{stage}.nii")
    try:
        with open(fname, "rb") as f:
            lab = read_nifti(f.read(), labels=True)
    except OSError as e:
        raise InputError(f"cannot read predicted mask {fname}: {e}") from e
    if lab.dims != subject.image.dims:
        raise InputError(
            f"mask dims {lab.dims} do not match subject dims {subject.image.dims}"
        )
    if stage == "myocardium":
        return np.isin(lab.data, (2, 3))
    return np.asarray(lab.data == 3)


def mask_from_labelmap(labels: LabelMap, stage: str) -> np.ndarray:
    """Oracle mask straight from ground truth (wall incl. scar for the
    myocardium stage)."""
    if stage == "myocardium":
        return np.isin(labels.data, (2, 3))
    if stage == "scar":
        return np.asarray(labels.data == 3)
    raise ValueError(f"unknown stage {stage!r}")
