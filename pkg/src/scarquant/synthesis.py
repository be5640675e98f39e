"""Label-map augmentation and procedural image synthesis: 60-degree
rotations, elastic deformation, wall-constrained scar morphology,
label/style swapping and the bbox-training augmentation sampler."""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InputError
from .volume import (
    CLASS_MYOCARDIUM,
    CLASS_SCAR,
    LabelMap,
    SubjectRecord,
    Volume,
    write_nifti,
)

ROTATION_CHOICES = (0, 60, 120, 180, 240, 300)


@dataclass(frozen=True)
class LabelAugSpec:
    rotation_deg: int = 0
    elastic_alpha: float = 50.0
    elastic_sigma: float = 5.0
    elastic_seed: int | None = None
    morph_op: str = "none"  # none | dilate | open
    morph_radius: int = 1

    def __post_init__(self):
        if self.rotation_deg % 60:
            raise ValueError("rotation must be a multiple of 60 degrees")
        if self.morph_op not in ("none", "dilate", "open"):
            raise ValueError(f"unknown morph op {self.morph_op!r}")


@dataclass(frozen=True)
class BboxAugSpec:
    """Sampling ranges for bbox-training augmentation. A component set
    to None is disabled; identity() disables everything."""

    noise_mu: float | None = 0.1
    noise_sigma: float = 0.1
    blur_sigma: float | None = 1.5
    shear_deg: tuple | None = (-20.0, 20.0)
    rotation_deg: tuple | None = (-90.0, 90.0)
    translation_frac: tuple | None = (0.14, 0.21)
    scale: tuple | None = (0.5, 1.5)

    @staticmethod
    def identity() -> "BboxAugSpec":
        return BboxAugSpec(None, 0.0, None, None, None, None, None)


@dataclass(frozen=True)
class AffineParams:
    rotation_deg: float = 0.0
    shear_deg: float = 0.0
    tx_frac: float = 0.0
    ty_frac: float = 0.0
    scale: float = 1.0


@dataclass
class SynthesisRequest:
    output_id: str
    labels: LabelMap
    style: SubjectRecord
    stage: str  # myocardium | scar
    aug: LabelAugSpec | None = None
    source_subject: str = ""
    meta: dict = field(default_factory=dict)


def rotate_labels(label_slice: np.ndarray, deg: int) -> np.ndarray:
    """Nearest-neighbor rotation about the slice center ((H-1)/2,
    (W-1)/2, so 180 degrees is an exact pixel permutation)."""
    if deg % 60:
        raise ValueError("rotation must be a multiple of 60 degrees")
    a = np.asarray(label_slice)
    deg = deg % 360
    if deg == 0:
        return a.copy()
    h, w = a.shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    rr, cc_grid = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    th = np.deg2rad(deg)
    # inverse-map output pixels into the input frame
    dy = rr - cr
    dx = cc_grid - cc
    src_r = np.cos(th) * dy + np.sin(th) * dx + cr
    src_c = -np.sin(th) * dy + np.cos(th) * dx + cc
    sr = np.rint(src_r).astype(np.int64)
    sc = np.rint(src_c).astype(np.int64)
    inside = (sr >= 0) & (sr < h) & (sc >= 0) & (sc < w)
    out = np.zeros_like(a)
    out[inside] = a[sr[inside], sc[inside]]
    return out


def elastic_deform(
    label_slice: np.ndarray,
    alpha: float = 50.0,
    sigma: float = 5.0,
    seed: int | None = None,
) -> np.ndarray:
    """Nearest-neighbor warp by a smoothed random displacement field:
    per-pixel U(-1,1) noise, Gaussian-smoothed with sigma, scaled by
    alpha; sampling coordinates clamped to the slice."""
    if alpha < 0 or sigma <= 0:
        raise ValueError("need alpha >= 0 and sigma > 0")
    a = np.asarray(label_slice)
    if alpha == 0:
        return a.copy()
    h, w = a.shape
    rng = np.random.default_rng(seed)
    disp_r = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    disp_c = ndimage.gaussian_filter(rng.uniform(-1, 1, (h, w)), sigma) * alpha
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sr = np.clip(np.rint(rr + disp_r), 0, h - 1).astype(np.int64)
    sc = np.clip(np.rint(cc + disp_c), 0, w - 1).astype(np.int64)
    return a[sr, sc]


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return yy * yy + xx * xx <= radius * radius


def morph(label_slice: np.ndarray, op: str, radius: int = 1) -> np.ndarray:
    """Dilate or open the scar class with a disk structuring element.

    Dilated scar grows only into myocardium (the wall as a set is
    unchanged); opened-away scar reverts to myocardium.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if op not in ("dilate", "open"):
        raise ValueError(f"unknown morph op {op!r}")
    a = np.asarray(label_slice)
    scar = a == CLASS_SCAR
    wall = scar | (a == CLASS_MYOCARDIUM)
    se = _disk(radius)
    if op == "dilate":
        new_scar = ndimage.binary_dilation(scar, structure=se) & wall
    else:
        new_scar = ndimage.binary_opening(scar, structure=se) & wall
    out = a.copy()
    out[wall & ~new_scar] = CLASS_MYOCARDIUM
    out[new_scar] = CLASS_SCAR
    return out


def apply_label_aug(labels: LabelMap, spec: LabelAugSpec) -> LabelMap:
    """Apply a full per-slice augmentation spec to a label volume."""
    out = []
    for k, sl in enumerate(labels.data):
        s = rotate_labels(sl, spec.rotation_deg)
        if spec.elastic_alpha > 0:
            slice_seed = None
            if spec.elastic_seed is not None:
                slice_seed = spec.elastic_seed + k
            s = elastic_deform(s, spec.elastic_alpha, spec.elastic_sigma, slice_seed)
        if spec.morph_op != "none":
            s = morph(s, spec.morph_op, spec.morph_radius)
        out.append(s)
    return LabelMap(np.stack(out).astype(labels.data.dtype), labels.spacing)


def swap_label_style(
    labels_from: SubjectRecord, style_from: SubjectRecord, output_id: str | None = None
) -> SynthesisRequest:
    """Pair one subject's labels with another subject's image as style.

    Swapped-label data feeds the myocardium stage only; scar-stage
    synthetic data comes from augmented (not swapped) labels.
    """
    if labels_from.labels is None:
        raise ValueError(f"subject {labels_from.id} has no labels to swap")
    if (
        labels_from.pathological is not None
        and labels_from.pathological == style_from.pathological
    ):
        warnings.warn("label/style pair shares pathology status")
    return SynthesisRequest(
        output_id=output_id or f"{labels_from.id}_style_{style_from.id}",
        labels=labels_from.labels,
        style=style_from,
        stage="myocardium",
        source_subject=labels_from.id,
    )


def synthesize_image(
    request: SynthesisRequest,
    blend_sigma: float = 1.0,
    noise_sigma: float = 0.02,
    seed: int | None = None,
) -> Volume:
    """Procedural label-conditioned synthesis: each class painted with
    the mean of a Gaussian fitted to the style image's pixels of that
    class, blended across boundaries with a Gaussian blur and finished
    with additive noise scaled to the style intensity range."""
    labels = request.labels.data
    style_img = request.style.image.data
    style_lab = request.style.labels.data if request.style.labels is not None else None
    rng = np.random.default_rng(seed)

    stats = {}
    for cls in np.unique(labels):
        if style_lab is not None and np.any(style_lab == cls):
            vals = style_img[style_lab == cls]
        else:
            warnings.warn(
                f"style subject {request.style.id} lacks class {int(cls)}; "
                "using global style statistics"
            )
            vals = style_img.ravel()
        stats[int(cls)] = (float(vals.mean()), float(vals.std()))

    out = np.zeros(labels.shape, dtype=np.float64)
    for cls, (mu, _) in stats.items():
        out[labels == cls] = mu
    if blend_sigma > 0:
        for k in range(out.shape[0]):
            out[k] = ndimage.gaussian_filter(out[k], blend_sigma)
    if noise_sigma > 0:
        intensity_range = float(style_img.max() - style_img.min())
        out += rng.normal(0.0, noise_sigma * intensity_range, size=out.shape)
    return Volume(out.astype(np.float32), request.labels.spacing)


def sample_bbox_params(spec: BboxAugSpec, seed: int | None = None):
    """Draw one augmentation parameter set. Returns (AffineParams,
    photometric dict). Draw order is fixed so results are reproducible
    per seed."""
    rng = np.random.default_rng(seed)
    rot = rng.uniform(*spec.rotation_deg) if spec.rotation_deg else 0.0
    shear = rng.uniform(*spec.shear_deg) if spec.shear_deg else 0.0
    if spec.translation_frac:
        mag = rng.uniform(*spec.translation_frac, size=2)
        sign = rng.choice([-1.0, 1.0], size=2)
        tx, ty = sign * mag
    else:
        tx = ty = 0.0
    sc = rng.uniform(*spec.scale) if spec.scale else 1.0
    photo = {
        "noise_mu": spec.noise_mu,
        "noise_sigma": spec.noise_sigma if spec.noise_mu is not None else 0.0,
        "blur_sigma": spec.blur_sigma,
        "rng": rng,
    }
    return AffineParams(rot, shear, tx, ty, sc), photo


def _affine_matrix(params: AffineParams, shape):
    h, w = shape
    cr, cc = (h - 1) / 2.0, (w - 1) / 2.0
    th = np.deg2rad(params.rotation_deg)
    sh = np.tan(np.deg2rad(params.shear_deg))
    s = params.scale
    # forward map in (col, row): scale, shear x by y, then rotate
    fwd = np.array(
        [[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]]
    ) @ np.array([[s, s * sh], [0, s]])
    t = np.array([params.tx_frac * w, params.ty_frac * h])
    center = np.array([cc, cr])
    offset = center + t - fwd @ center
    return fwd, offset


def apply_affine(image_slice: np.ndarray, box, params: AffineParams):
    """Apply one affine transform identically to an image and a bounding
    box (box re-tightened over its transformed corners)."""
    from .bbox import BoundingBox

    a = np.asarray(image_slice, dtype=np.float64)
    fwd, offset = _affine_matrix(params, a.shape)
    inv = np.linalg.inv(fwd)
    # ndimage maps output coords through `matrix` into the input, in
    # (row, col) order
    inv_rc = inv[::-1, ::-1]
    out = ndimage.affine_transform(
        a, inv_rc, offset=-inv_rc @ offset[::-1], order=1, mode="constant"
    )
    corners = np.array(
        [[box.x0, box.y0], [box.x1, box.y0], [box.x0, box.y1], [box.x1, box.y1]]
    )
    moved = corners @ fwd.T + offset
    x0, y0 = moved.min(axis=0)
    x1, y1 = moved.max(axis=0)
    return out, BoundingBox((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)


def augment_for_bbox(image_slice: np.ndarray, gt_box, spec: BboxAugSpec, seed=None):
    """Sampled geometric transform applied to image and box, then
    photometric blur/noise on the image only."""
    params, photo = sample_bbox_params(spec, seed)
    if params == AffineParams():
        out, box = np.asarray(image_slice, dtype=np.float64).copy(), gt_box
    else:
        out, box = apply_affine(image_slice, gt_box, params)
    if photo["blur_sigma"]:
        out = ndimage.gaussian_filter(out, photo["blur_sigma"])
    if photo["noise_mu"] is not None:
        out = out + photo["rng"].normal(
            photo["noise_mu"], photo["noise_sigma"], size=out.shape
        )
    return out, box


MANIFEST_FIELDS = [
    "output_id",
    "source_subject",
    "style_subject",
    "rotation_deg",
    "elastic_seed",
    "morph_op",
    "morph_radius",
    "stage",
]


def derive_seed(root_seed: int, index: int) -> int:
    """Stable per-request seed from a root seed."""
    return int(
        np.random.SeedSequence([root_seed, index]).generate_state(1, np.uint32)[0]
    )


def emit_dataset(requests, out_dir, root_seed: int = 0) -> list[dict]:
    """Synthesize every request and write image/label NIfTI pairs plus a
    provenance manifest CSV. Deterministic per root seed."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise InputError(f"cannot create output dir {out_dir}: {e}") from e
    rows = []
    for i, req in enumerate(requests):
        img = synthesize_image(req, seed=derive_seed(root_seed, i))
        try:
            with open(os.path.join(out_dir, f"{req.output_id}.nii"), "wb") as f:
                f.write(write_nifti(img, 16))
            with open(os.path.join(out_dir, f"{req.output_id}_gt.nii"), "wb") as f:
                f.write(write_nifti(req.labels, 2))
        except OSError as e:
            raise InputError(f"cannot write to {out_dir}: {e}") from e
        aug = req.aug
        rows.append(
            {
                "output_id": req.output_id,
                "source_subject": req.source_subject,
                "style_subject": req.style.id,
                "rotation_deg": aug.rotation_deg if aug else "",
                "elastic_seed": aug.elastic_seed if aug else "",
                "morph_op": aug.morph_op if aug else "",
                "morph_radius": aug.morph_radius if aug else "",
                "stage": req.stage,
            }
        )
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
    return rows
