"""Cascaded pipeline orchestration: per-subject runs for the ablation
variants (a)-(e), configuration handling and report assembly."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import bbox, metrics, preprocess, qc, segment
from .errors import ConfigError, DegenerateInputError
from .volume import SubjectRecord

VARIANTS = ("a", "b", "c", "d", "e")
# variants with a bounding-box stage / with a separate cascaded scar stage
_BBOX_VARIANTS = ("a", "c", "e")
_CASCADE_VARIANTS = ("a", "b", "e")

MYO_SEGMENTERS = ("em", "oracle", "import")
SCAR_SEGMENTERS = ("nsd", "fwhm", "em", "otsu", "oracle", "import")
REGRESSORS = ("heuristic", "oracle", "external")


@dataclass(frozen=True)
class PipelineConfig:
    variant: str = "a"
    regressor: str | None = None  # None = heuristic where a bbox stage exists
    external_boxes: str | None = None
    myo_seg: str = "em"
    scar_seg: str = "nsd"
    import_dir: str | None = None
    use_gt_myocardium: bool = False
    qc_revote: bool = True
    qc_ratio_filter: bool = True
    min_scar_ratio: float = qc.MIN_SCAR_RATIO
    revote_count: int = 10
    nsd_n: float = 5.0
    vote_strict: bool = False
    vote_largest_k: bool = False
    box_margin: float = bbox.DEFAULT_MARGIN
    frame_size: int = 256
    myo_net_size: int = 128
    scar_crop_size: int = 64
    seed: int = 0
    synth_per_subject: int = 1  # variant (e) synthetic-dataset size

    def validate(self) -> "PipelineConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.variant in ("b", "d") and self.regressor is not None:
            raise ConfigError(
                f"variant ({self.variant}) has no bounding-box stage; "
                "remove the regressor setting"
            )
        if self.regressor is not None and self.regressor not in REGRESSORS:
            raise ConfigError(f"unknown regressor {self.regressor!r}")
        if self.regressor == "external" and not self.external_boxes:
            raise ConfigError("external regressor needs external_boxes path")
        if self.myo_seg not in MYO_SEGMENTERS:
            raise ConfigError(f"unknown myocardium segmenter {self.myo_seg!r}")
        if self.scar_seg not in SCAR_SEGMENTERS:
            raise ConfigError(f"unknown scar segmenter {self.scar_seg!r}")
        if "import" in (self.myo_seg, self.scar_seg) and not self.import_dir:
            raise ConfigError("mask import requires import_dir")
        return self

    @property
    def has_bbox(self) -> bool:
        return self.variant in _BBOX_VARIANTS

    @property
    def cascaded_scar(self) -> bool:
        return self.variant in _CASCADE_VARIANTS


@dataclass
class QuantReport:
    subject_id: str
    slice_rows: list = field(default_factory=list)
    subject_rows: list = field(default_factory=list)
    qc_events: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    scar_present: bool = False
    config: PipelineConfig | None = None
    pred_wall: np.ndarray | None = None
    pred_scar: np.ndarray | None = None

    @property
    def partial(self) -> bool:
        return bool(self.errors)


def subject_seed(config_seed: int, subject_id: str) -> int:
    return int(
        np.random.SeedSequence(
            [config_seed, zlib.crc32(subject_id.encode())]
        ).generate_state(1, np.uint32)[0]
    )


def _prepare_frames(subject: SubjectRecord, frame: int):
    """Crop/pad image and labels to the working frame and normalize."""
    norm = []
    raw = []
    for sl in subject.image.data:
        padded = preprocess.crop_or_pad(sl, frame)
        raw.append(padded)
        norm.append(preprocess.percentile_normalize(padded))
    gt = None
    if subject.labels is not None:
        gt = np.stack(
            [preprocess.crop_or_pad(sl, frame) for sl in subject.labels.data]
        )
    return np.stack(raw), np.stack(norm), gt


def _detect_box(subject, norm_frames, gt_frames, config):
    prop = bbox.proposal_box(config.frame_size, config.frame_size)
    reg = config.regressor or "heuristic"
    if reg == "heuristic":
        ref = bbox.select_reference_slice(len(norm_frames))
        t = bbox.heuristic_regressor(norm_frames[ref], config.box_margin)
    elif reg == "oracle":
        if gt_frames is None:
            raise ConfigError("oracle regressor requires ground-truth labels")
        lv = np.isin(gt_frames, (1, 2, 3))
        if not lv.any():
            raise DegenerateInputError("no LV voxels for oracle box")
        _, rows, cols = np.nonzero(lv)
        return prop, bbox._tight_box(rows, cols, config.box_margin)
    else:  # external
        preds = bbox.load_box_predictions(config.external_boxes)
        if subject.id not in preds:
            raise ConfigError(f"no external box for subject {subject.id}")
        t = preds[subject.id]
    return prop, bbox.apply_transform(prop, t)


def _box_rect(box, frame: int):
    r0 = max(0, int(np.floor(box.y0)))
    r1 = min(frame, max(r0 + 1, int(np.ceil(box.y1))))
    c0 = max(0, int(np.floor(box.x0)))
    c1 = min(frame, max(c0 + 1, int(np.ceil(box.x1))))
    return r0, r1, c0, c1


def _segment_myo_in_box(norm_slice, box, config, seed):
    frame = config.frame_size
    r0, r1, c0, c1 = _box_rect(box, frame)
    crop = norm_slice[r0:r1, c0:c1]
    net_in = preprocess.resample(crop, config.myo_net_size, config.myo_net_size)
    mask_small = segment.phantom_myo_segmenter(net_in, seed=seed)
    mask = preprocess.resample(
        mask_small.astype(np.uint8), c1 - c0, r1 - r0, mode="nearest"
    ).astype(bool)
    out = np.zeros_like(norm_slice, dtype=bool)
    out[r0:r1, c0:c1] = mask
    return out


def _myo_stage(subject, norm_frames, gt_frames, box, config, seed, report):
    frame = config.frame_size
    masks = []
    if config.use_gt_myocardium or config.myo_seg == "oracle":
        if gt_frames is None:
            raise ConfigError("oracle myocardium stage requires labels")
        return [np.isin(g, (2, 3)) for g in gt_frames]
    if config.myo_seg == "import":
        vol_mask = segment.import_masks(config.import_dir, subject, "myocardium")
        return [preprocess.crop_or_pad(m, frame).astype(bool) for m in vol_mask]

    for k, sl in enumerate(norm_frames):
        if box is not None:
            mask = _segment_myo_in_box(sl, box, config, seed)
        else:
            mask = segment.phantom_myo_segmenter(sl, seed=seed)
        if (
            not qc.is_closed_myocardium(mask)
            and config.qc_revote
            and box is not None
        ):
            jittered = qc.jitter_boxes(box, config.revote_count, seed=seed + k)
            preds = [_segment_myo_in_box(sl, jb, config, seed) for jb in jittered]
            vote = qc.ensemble_revote(
                preds, mask, strict=config.vote_strict, largest_k=config.vote_largest_k
            )
            report.qc_events.append(
                {
                    "subject": subject.id,
                    "slice": k,
                    "event": "revote",
                    "k": vote.k,
                    "fell_back": vote.fell_back,
                }
            )
            mask = vote.mask
        masks.append(mask)
    return masks


def _scar_remote_region(masked_window, myo_window):
    vals = masked_window[myo_window]
    return myo_window & (masked_window <= np.median(vals))


def _scar_from_values(img, myo, config, seed):
    """Apply the configured intensity segmenter within the wall."""
    if config.scar_seg == "nsd":
        remote = _scar_remote_region(img, myo)
        if np.count_nonzero(remote) < 2:
            return np.zeros_like(myo)
        return segment.nsd_threshold(img, myo, remote, config.nsd_n)
    if config.scar_seg == "fwhm":
        seed_mask = segment.default_fwhm_seed(img, myo)
        return segment.fwhm_threshold(img, myo, seed_mask)
    if config.scar_seg == "em":
        return segment.em_scar_segment(img, myo, seed=seed)
    if config.scar_seg == "otsu":
        vals = img[myo]
        if vals.max() <= vals.min():
            return np.zeros_like(myo)
        thr = segment.otsu_threshold(vals)
        return myo & (img > thr)
    raise ConfigError(f"unknown scar segmenter {config.scar_seg!r}")


def _scar_stage(subject, norm_frames, gt_frames, myo_masks, config, seed, report):
    frame = config.frame_size
    if config.scar_seg == "oracle":
        if gt_frames is None:
            raise ConfigError("oracle scar stage requires labels")
        return [g == 3 for g in gt_frames]
    if config.scar_seg == "import":
        vol_mask = segment.import_masks(config.import_dir, subject, "scar")
        return [preprocess.crop_or_pad(m, frame).astype(bool) for m in vol_mask]

    scar_masks = []
    for k, (sl, myo) in enumerate(zip(norm_frames, myo_masks)):
        if not myo.any():
            scar_masks.append(np.zeros_like(myo))
            continue
        try:
            if config.cascaded_scar:
                window, offset = preprocess.crop_at_centroid(
                    sl, myo, config.scar_crop_size
                )
                myo_w = preprocess.extract_window(myo, offset, config.scar_crop_size)
                if qc.is_closed_myocardium(myo):
                    cavity = qc.interior_of(myo)
                    cav_w = preprocess.extract_window(
                        cavity, offset, config.scar_crop_size
                    )
                else:
                    cav_w = np.zeros_like(myo_w)
                masked = preprocess.mask_for_scar(window, myo_w, cav_w)
                scar_w = _scar_from_values(masked, myo_w, config, seed + k)
                if cav_w.any():
                    # one-pixel endocardial guard: blood-pool partial
                    # volume otherwise reads as enhancement
                    rim = ndimage.binary_dilation(
                        cav_w, structure=np.ones((3, 3), bool)
                    )
                    scar_w &= ~rim
                scar = preprocess.uncrop_mask(scar_w, offset, myo.shape)
            else:
                scar = _scar_from_values(sl, myo, config, seed + k)
            scar &= myo
            if config.qc_ratio_filter and scar.any():
                filtered = qc.scar_ratio_filter(scar, myo, config.min_scar_ratio)
                if filtered.sum() != scar.sum():
                    report.qc_events.append(
                        {
                            "subject": subject.id,
                            "slice": k,
                            "event": "ratio_filter",
                            "k": int(scar.sum() - filtered.sum()),
                            "fell_back": False,
                        }
                    )
                scar = filtered
        except DegenerateInputError as e:
            report.errors.append({"subject": subject.id, "slice": k, "error": str(e)})
            scar = np.zeros_like(myo)
        scar_masks.append(scar)
    return scar_masks


def _metric_rows(subject, gt_frames, wall_pred, scar_pred, spacing, report):
    gt_wall = np.isin(gt_frames, (2, 3))
    gt_scar = gt_frames == 3
    for k in range(len(gt_frames)):
        for cls, pred, gt in (
            ("myocardium", wall_pred[k], gt_wall[k]),
            ("scar", scar_pred[k], gt_scar[k]),
        ):
            report.slice_rows.append(
                {
                    "subject_id": subject.id,
                    "slice": k,
                    "class": cls,
                    "dsc": metrics.dice(pred, gt),
                    "hd_mm": "",
                    "vol_manual_cm3": metrics.mask_volume_cm3(gt, spacing),
                    "vol_auto_cm3": metrics.mask_volume_cm3(pred, spacing),
                    "vol_diff_cm3": metrics.volume_difference(gt, pred, spacing),
                    "scar_burden_pct": "",
                }
            )
    for cls, pred, gt in (("myocardium", wall_pred, gt_wall), ("scar", scar_pred, gt_scar)):
        try:
            hd = metrics.hausdorff_mm(pred, gt, spacing)
        except DegenerateInputError:
            hd = ""  # undefined for empty masks
        burden = ""
        if cls == "scar":
            try:
                burden = metrics.scar_burden(scar_pred, wall_pred, spacing)
            except DegenerateInputError:
                burden = ""
        per_slice = [
            r["dsc"]
            for r in report.slice_rows
            if r["class"] == cls and r["subject_id"] == subject.id
        ]
        report.subject_rows.append(
            {
                "subject_id": subject.id,
                "slice": "all",
                "class": cls,
                "dsc": metrics.dice(pred, gt),
                "dsc_slice_mean": float(np.mean(per_slice)),
                "hd_mm": hd,
                "vol_manual_cm3": metrics.mask_volume_cm3(gt, spacing),
                "vol_auto_cm3": metrics.mask_volume_cm3(pred, spacing),
                "vol_diff_cm3": metrics.volume_difference(gt, pred, spacing),
                "scar_burden_pct": burden,
            }
        )


def run_subject(subject: SubjectRecord, config: PipelineConfig) -> QuantReport:
    """Execute the configured pipeline variant on one subject."""
    config.validate()
    report = QuantReport(subject_id=subject.id, config=config)
    seed = subject_seed(config.seed, subject.id)
    _, norm_frames, gt_frames = _prepare_frames(subject, config.frame_size)

    box = None
    if config.has_bbox:
        _, box = _detect_box(subject, norm_frames, gt_frames, config)

    myo_masks = _myo_stage(subject, norm_frames, gt_frames, box, config, seed, report)
    scar_masks = _scar_stage(
        subject, norm_frames, gt_frames, myo_masks, config, seed, report
    )
    wall = np.stack(myo_masks)
    scar = np.stack(scar_masks)
    report.pred_wall = wall
    report.pred_scar = scar
    report.scar_present = bool(scar.any())

    if gt_frames is not None:
        _metric_rows(subject, gt_frames, wall, scar, subject.image.spacing, report)
    else:
        spacing = subject.image.spacing
        burden = ""
        if wall.any():
            burden = metrics.scar_burden(scar, wall, spacing)
        report.subject_rows.append(
            {
                "subject_id": subject.id,
                "slice": "all",
                "class": "scar",
                "dsc": "",
                "dsc_slice_mean": "",
                "hd_mm": "",
                "vol_manual_cm3": "",
                "vol_auto_cm3": metrics.mask_volume_cm3(scar, spacing),
                "vol_diff_cm3": "",
                "scar_burden_pct": burden,
            }
        )
    return report


def replace_with_gt_myocardium(subject: SubjectRecord, config: PipelineConfig):
    """run_subject with the myocardium stage forced to ground truth, to
    measure error propagation into the scar stage."""
    if subject.labels is None:
        raise ConfigError(f"subject {subject.id} has no ground-truth labels")
    return run_subject(subject, replace(config, use_gt_myocardium=True))


@dataclass
class AblationResult:
    slice_rows: list  # one row per (config, subject, slice, class)
    summaries: list  # mean (sd) per config and class
    pairwise: list  # Wilcoxon p-values between configs


def run_ablation(dataset, configs: dict) -> AblationResult:
    """Run several configs over a dataset and compare per-slice DSC
    distributions with the Wilcoxon signed-rank test."""
    if len(configs) < 2:
        raise ConfigError("ablation needs at least 2 configs")
    per_config: dict[str, dict[str, list]] = {}
    slice_rows = []
    for name, cfg in configs.items():
        dscs = {"myocardium": [], "scar": []}
        for subj in dataset:
            rep = run_subject(subj, cfg)
            by_slice: dict[int, dict[str, float]] = {}
            for row in rep.slice_rows:
                by_slice.setdefault(row["slice"], {})[row["class"]] = row["dsc"]
            for k in sorted(by_slice):
                slice_rows.append(
                    {
                        "config": name,
                        "subject_id": subj.id,
                        "slice": k,
                        "dsc_myocardium": by_slice[k]["myocardium"],
                        "dsc_scar": by_slice[k]["scar"],
                    }
                )
                for cls in dscs:
                    dscs[cls].append(by_slice[k][cls])
        per_config[name] = dscs

    summaries = []
    for name, dscs in per_config.items():
        for cls, vals in dscs.items():
            summaries.append(
                {
                    "config": name,
                    "class": cls,
                    "mean_dsc": float(np.mean(vals)),
                    "sd_dsc": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                    "n_slices": len(vals),
                }
            )

    pairwise = []
    names = list(per_config)
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            for cls in ("myocardium", "scar"):
                a = np.asarray(per_config[names[i]][cls])
                b = np.asarray(per_config[names[j]][cls])
                d = a - b
                if np.all(d == 0):
                    p = 1.0  # identical outputs carry no signal
                else:
                    p = metrics.wilcoxon_signed_rank(d)
                pairwise.append(
                    {"config_a": names[i], "config_b": names[j], "class": cls, "p": p}
                )
    return AblationResult(slice_rows, summaries, pairwise)


def split_dataset(subjects, test_fraction: float = 0.2, seed: int | None = None):
    """Seeded train/test split (the 80/20 internal-test convention)."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    idx = np.random.default_rng(seed).permutation(len(subjects))
    n_test = max(1, int(round(len(subjects) * test_fraction)))
    test_idx = set(idx[:n_test].tolist())
    train = [s for i, s in enumerate(subjects) if i not in test_idx]
    test = [s for i, s in enumerate(subjects) if i in test_idx]
    return train, test
