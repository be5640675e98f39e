"""Slice-level preprocessing: percentile normalization, crop/pad,
resampling, centroid cropping and the scar-stage masking recipe."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .errors import DegenerateInputError

CAVITY_FILL_VALUE = 2.5


@dataclass(frozen=True)
class NormParams:
    p_lo: float = 5.0
    p_hi: float = 95.0
    clamp: bool = True

    def __post_init__(self):
        if not (0 <= self.p_lo < self.p_hi <= 100):
            raise ValueError(f"bad percentile ranks ({self.p_lo}, {self.p_hi})")


def percentile_normalize(slice_2d: np.ndarray, params: NormParams = NormParams()):
    """Min-max normalize using percentile pseudo-min/max (linear
    interpolation), optionally clamped to [0, 1]."""
    a = np.asarray(slice_2d, dtype=np.float64)
    lo, hi = np.percentile(a, [params.p_lo, params.p_hi])
    if hi <= lo:
        raise DegenerateInputError("pseudo-min >= pseudo-max (constant slice?)")
    out = (a - lo) / (hi - lo)
    if params.clamp:
        out = np.clip(out, 0.0, 1.0)
    return out


def crop_or_pad(slice_2d: np.ndarray, target: int = 256) -> np.ndarray:
    """Center-crop or zero-pad each dimension to target; for odd
    differences the extra pixel goes to the high side."""
    if target <= 0 or target % 2:
        raise ValueError("target must be positive and even")
    out = np.asarray(slice_2d)
    for axis in (0, 1):
        n = out.shape[axis]
        if n > target:
            start = (n - target) // 2
            out = np.take(out, range(start, start + target), axis=axis)
        elif n < target:
            lo = (target - n) // 2
            hi = target - n - lo
            pad = [(0, 0), (0, 0)]
            pad[axis] = (lo, hi)
            out = np.pad(out, pad)
    return out


def resample(slice_2d: np.ndarray, out_w: int, out_h: int, mode: str = "bilinear"):
    """Separable resample with corner-aligned pixel centers.

    mode 'bilinear' for images, 'nearest' for label/mask grids.
    """
    if out_w <= 0 or out_h <= 0:
        raise ValueError("target size must be positive")
    if mode not in ("bilinear", "nearest"):
        raise ValueError(f"unknown mode {mode!r}")
    a = np.asarray(slice_2d, dtype=np.float64)
    in_h, in_w = a.shape
    if (in_h, in_w) == (out_h, out_w):
        return np.asarray(slice_2d).copy()

    def axis_coords(n_out, n_in):
        if n_out == 1:
            return np.array([(n_in - 1) / 2.0])
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    rr = axis_coords(out_h, in_h)
    cc = axis_coords(out_w, in_w)
    grid = np.meshgrid(rr, cc, indexing="ij")
    order = 1 if mode == "bilinear" else 0
    out = map_coordinates(a, grid, order=order, mode="nearest")
    if mode == "nearest":
        out = out.astype(np.asarray(slice_2d).dtype)
    return out


def crop_at_centroid(slice_2d: np.ndarray, myo_mask: np.ndarray, size: int = 64):
    """Extract a size x size window centered on the myocardium centroid.

    Returns (window, (row0, col0)) where the offset maps window pixel
    (i, j) back to slice pixel (row0 + i, col0 + j); out-of-image parts
    are zero-padded.
    """
    mask = np.asarray(myo_mask, dtype=bool)
    if not mask.any():
        raise DegenerateInputError("empty myocardium mask")
    rows, cols = np.nonzero(mask)
    cr = int(round(rows.mean()))
    cc = int(round(cols.mean()))
    r0 = cr - size // 2
    c0 = cc - size // 2
    out = np.zeros((size, size), dtype=np.float64)
    a = np.asarray(slice_2d, dtype=np.float64)
    h, w = a.shape
    src_r0, src_r1 = max(r0, 0), min(r0 + size, h)
    src_c0, src_c1 = max(c0, 0), min(c0 + size, w)
    if src_r0 < src_r1 and src_c0 < src_c1:
        out[src_r0 - r0 : src_r1 - r0, src_c0 - c0 : src_c1 - c0] = a[
            src_r0:src_r1, src_c0:src_c1
        ]
    return out, (r0, c0)


def extract_window(arr: np.ndarray, offset, size: int) -> np.ndarray:
    """The size x size window at a crop_at_centroid offset, zero-padded
    outside the array."""
    r0, c0 = offset
    a = np.asarray(arr)
    out = np.zeros((size, size), dtype=a.dtype)
    h, w = a.shape
    src_r0, src_r1 = max(r0, 0), min(r0 + size, h)
    src_c0, src_c1 = max(c0, 0), min(c0 + size, w)
    if src_r0 < src_r1 and src_c0 < src_c1:
        out[src_r0 - r0 : src_r1 - r0, src_c0 - c0 : src_c1 - c0] = a[
            src_r0:src_r1, src_c0:src_c1
        ]
    return out


def uncrop_mask(window_mask: np.ndarray, offset, shape) -> np.ndarray:
    """Inverse of crop_at_centroid for binary masks."""
    r0, c0 = offset
    out = np.zeros(shape, dtype=bool)
    size_r, size_c = window_mask.shape
    h, w = shape
    src_r0, src_r1 = max(r0, 0), min(r0 + size_r, h)
    src_c0, src_c1 = max(c0, 0), min(c0 + size_c, w)
    if src_r0 < src_r1 and src_c0 < src_c1:
        out[src_r0:src_r1, src_c0:src_c1] = window_mask[
            src_r0 - r0 : src_r1 - r0, src_c0 - c0 : src_c1 - c0
        ]
    return out


def mask_for_scar(
    slice_2d: np.ndarray,
    myo_mask: np.ndarray,
    cavity_mask: np.ndarray,
    params: NormParams = NormParams(),
) -> np.ndarray:
    """Scar-stage input: zero outside the wall and cavity, myocardium
    intensities percentile-normalized over myocardium pixels only, and
    the cavity filled with the constant 2.5."""
    myo = np.asarray(myo_mask, dtype=bool)
    cav = np.asarray(cavity_mask, dtype=bool)
    if np.any(myo & cav):
        raise ValueError("myocardium and cavity masks overlap")
    if not myo.any():
        raise DegenerateInputError("empty myocardium mask")
    a = np.asarray(slice_2d, dtype=np.float64)
    vals = a[myo]
    lo, hi = np.percentile(vals, [params.p_lo, params.p_hi])
    if hi <= lo:
        raise DegenerateInputError("constant myocardium intensities")
    out = np.zeros_like(a)
    out[myo] = np.clip((vals - lo) / (hi - lo), 0.0, 1.0)
    out[cav] = CAVITY_FILL_VALUE
    return out
