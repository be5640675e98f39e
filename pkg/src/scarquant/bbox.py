"""Bounding-box geometry: center-box proposal, 4-value transform
encoding, ground-truth box derivation and a classical stand-in
regressor."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from . import qc, segment
from .errors import InputError
from .volume import LabelMap

PROPOSAL_SIDE = 134.0
DEFAULT_MARGIN = 0.10


@dataclass(frozen=True)
class BoundingBox:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box sides must be positive")

    @property
    def x0(self):
        return self.cx - self.w / 2

    @property
    def y0(self):
        return self.cy - self.h / 2

    @property
    def x1(self):
        return self.cx + self.w / 2

    @property
    def y1(self):
        return self.cy + self.h / 2


@dataclass(frozen=True)
class BoxTransform:
    dx: float
    dy: float
    sx: float
    sy: float

    def __post_init__(self):
        if self.sx <= 0 or self.sy <= 0:
            raise ValueError("box scalings must be positive")


IDENTITY_TRANSFORM = BoxTransform(0.0, 0.0, 1.0, 1.0)


def proposal_box(image_w: int, image_h: int) -> BoundingBox:
    """Fixed 134 x 134 proposal centered in the image."""
    return BoundingBox(image_w / 2.0, image_h / 2.0, PROPOSAL_SIDE, PROPOSAL_SIDE)


def encode_transform(proposal: BoundingBox, target: BoundingBox) -> BoxTransform:
    return BoxTransform(
        target.cx - proposal.cx,
        target.cy - proposal.cy,
        target.w / proposal.w,
        target.h / proposal.h,
    )


def apply_transform(proposal: BoundingBox, t: BoxTransform) -> BoundingBox:
    return BoundingBox(
        proposal.cx + t.dx, proposal.cy + t.dy, proposal.w * t.sx, proposal.h * t.sy
    )


def _tight_box(rows: np.ndarray, cols: np.ndarray, margin: float) -> BoundingBox:
    r0, r1 = rows.min(), rows.max() + 1
    c0, c1 = cols.min(), cols.max() + 1
    w = float(c1 - c0)
    h = float(r1 - r0)
    return BoundingBox(
        (c0 + c1) / 2.0, (r0 + r1) / 2.0, w * (1 + 2 * margin), h * (1 + 2 * margin)
    )


def gt_box_from_labels(labelmap: LabelMap, margin: float = DEFAULT_MARGIN):
    """Tight box around cavity+myocardium over all slices, each side
    expanded by margin * extent."""
    lv = np.isin(labelmap.data, (1, 2))
    if not lv.any():
        raise ValueError("no LV (cavity/myocardium) voxels in labels")
    _, rows, cols = np.nonzero(lv)
    return _tight_box(rows, cols, margin)


def select_reference_slice(n_slices: int) -> int:
    """Second slice from the base; falls back to 0 for single-slice stacks."""
    if n_slices < 1:
        raise ValueError("empty stack")
    if n_slices == 1:
        warnings.warn("single-slice stack: using slice 0 as reference")
        return 0
    return 1


def heuristic_regressor(slice_2d: np.ndarray, margin: float = DEFAULT_MARGIN):
    """Classical box predictor: Otsu-binarize, keep the dominant bright
    component, map the proposal onto its (margin-grown) tight box.

    The ventricle sits near the frame center in a short-axis series, so
    components are scored by size discounted with centroid distance from
    the center; that keeps bright edge structures such as subcutaneous
    fat from hijacking the box.
    """
    a = np.asarray(slice_2d, dtype=np.float64)
    h, w = a.shape
    prop = proposal_box(w, h)
    flat = a.ravel()
    if flat.max() <= flat.min():
        warnings.warn("blank slice: returning identity box transform")
        return IDENTITY_TRANSFORM
    thr = segment.otsu_threshold(flat)
    fg = a > thr
    comps = qc.connected_components(fg, connectivity=8)
    if comps.n_components == 0:
        warnings.warn("no bright component: returning identity box transform")
        return IDENTITY_TRANSFORM
    center = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    best, best_score = 1, -np.inf
    for lab in range(1, comps.n_components + 1):
        rows, cols = np.nonzero(comps.label_grid == lab)
        dist = np.hypot(rows.mean() - center[0], cols.mean() - center[1])
        score = rows.size / (1.0 + dist)
        if score > best_score:
            best, best_score = lab, score
    rows, cols = np.nonzero(comps.label_grid == best)
    return encode_transform(prop, _tight_box(rows, cols, margin))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = max(0.0, min(a.x1, b.x1) - max(a.x0, b.x0))
    iy = max(0.0, min(a.y1, b.y1) - max(a.y0, b.y0))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def load_box_predictions(path) -> dict[str, BoxTransform]:
    """Read external box predictions: CSV of subject_id, dx, dy, sx, sy."""
    out = {}
    try:
        with open(path, newline="") as f:
            for row in csv.DictReader(f):
                out[row["subject_id"]] = BoxTransform(
                    float(row["dx"]), float(row["dy"]), float(row["sx"]), float(row["sy"])
                )
    except OSError as e:
        raise InputError(f"cannot read box predictions: {e}") from e
    except (KeyError, ValueError) as e:
        raise InputError(f"malformed box prediction file {path}: {e}") from e
    return out
