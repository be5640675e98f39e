"""Command-line interface for the scar quantification toolkit.

Exit codes: 0 success, 1 input error, 2 config error, 3 success with
per-slice failures recorded.
"""

from __future__ import annotations

import csv
import dataclasses
import os
import sys

import click
import numpy as np

from . import phantom, pipeline, qc, report, synthesis
from .errors import ConfigError, InputError, NiftiFormatError, ScarQuantError
from .metrics import dice
from .volume import LabelMap, SubjectRecord, read_nifti, write_nifti

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _fail(code: int, msg: str):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _read_volume(path, labels=False, flip_slices=False):
    try:
        with open(path, "rb") as f:
            return read_nifti(f.read(), labels=labels, flip_slices=flip_slices)
    except OSError as e:
        raise InputError(str(e)) from e
    except NiftiFormatError as e:
        raise InputError(f"{path}: {e}") from e


def load_dataset(path, flip_slices=False) -> list[SubjectRecord]:
    """Load subjects from a manifest CSV (id,image,labels,pathological)
    or a directory of <id>.nii / <id>_gt.nii pairs."""
    subjects = []
    if os.path.isdir(path):
        names = sorted(
            f[:-4]
            for f in os.listdir(path)
            if f.endswith(".nii") and not f.endswith("_gt.nii")
        )
        if not names:
            raise InputError(f"no .nii volumes found in {path}")
        for sid in names:
            img = _read_volume(os.path.join(path, sid + ".nii"), flip_slices=flip_slices)
            gt_path = os.path.join(path, sid + "_gt.nii")
            labels = None
            if os.path.exists(gt_path):
                labels = _read_volume(gt_path, labels=True, flip_slices=flip_slices)
            pathological = None
            if labels is not None:
                pathological = bool(np.any(labels.data == 3))
            subjects.append(SubjectRecord(sid, img, labels, pathological))
        return subjects
    if not os.path.exists(path):
        raise InputError(f"no such dataset {path}")
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            base = os.path.dirname(os.path.abspath(path))

            def rel(p):
                return p if os.path.isabs(p) else os.path.join(base, p)

            img = _read_volume(rel(row["image"]), flip_slices=flip_slices)
            labels = None
            if row.get("labels"):
                labels = _read_volume(rel(row["labels"]), labels=True,
                                      flip_slices=flip_slices)
            pathological = None
            if row.get("pathological") not in (None, ""):
                pathological = row["pathological"].lower() in ("1", "true", "yes")
            subjects.append(SubjectRecord(row["id"], img, labels, pathological))
    if not subjects:
        raise InputError(f"empty manifest {path}")
    return subjects


def _config_from_file(path) -> dict:
    """Flat key=value config file; '#' starts a comment."""
    values = {}
    field_types = {f.name: f.type for f in dataclasses.fields(pipeline.PipelineConfig)}
    try:
        with open(path) as f:
            lines = f.readlines()
    except OSError as e:
        raise InputError(f"cannot read config {path}: {e}") from e
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in field_types:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(val, field_types[key])
    return values


def _coerce(val: str, type_hint: str):
    t = str(type_hint)
    if val.lower() in ("none", ""):
        return None
    if "bool" in t:
        return val.lower() in ("1", "true", "yes")
    if "int" in t and "|" not in t.replace("int | None", "int"):
        return int(val)
    if "int" in t:
        return int(val)
    if "float" in t:
        return float(val)
    return val


def _build_config(variant, myo_seg, scar_seg, regressor, seed, config_file, **extra):
    values = _config_from_file(config_file) if config_file else {}
    for k, v in dict(
        variant=variant, myo_seg=myo_seg, scar_seg=scar_seg, regressor=regressor,
        seed=seed, **extra,
    ).items():
        if v is not None:
            values[k] = v
    try:
        return pipeline.PipelineConfig(**values).validate()
    except TypeError as e:
        raise ConfigError(str(e)) from e


@click.group()
def main():
    """Cardiac LGE scar quantification pipeline."""


@main.command()
@click.argument("nifti_dir", type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", default="dataset.csv", show_default=True)
@click.option("--flip-slices", is_flag=True, help="Reverse slice order on ingest.")
def ingest(nifti_dir, output, flip_slices):
    """Scan a directory of NIfTI volumes into a dataset manifest CSV."""
    try:
        subjects = load_dataset(nifti_dir, flip_slices=flip_slices)
    except InputError as e:
        _fail(EXIT_INPUT, str(e))
    with open(output, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["id", "image", "labels", "pathological"])
        w.writeheader()
        for s in subjects:
            w.writerow(
                {
                    "id": s.id,
                    "image": os.path.join(nifti_dir, s.id + ".nii"),
                    "labels": os.path.join(nifti_dir, s.id + "_gt.nii")
                    if s.labels is not None
                    else "",
                    "pathological": "" if s.pathological is None else int(s.pathological),
                }
            )
    click.echo(f"wrote manifest for {len(subjects)} subjects to {output}")


@main.command("phantom")
@click.option("-n", "--count", default=20, show_default=True)
@click.option("--pathological-fraction", default=0.70, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--noise-sigma", default=0.02, show_default=True)
@click.option("-o", "--out-dir", required=True, type=click.Path(file_okay=False))
def phantom_cmd(count, pathological_fraction, seed, noise_sigma, out_dir):
    """Generate a phantom population as NIfTI pairs + manifest."""
    try:
        subjects = phantom.generate_population(
            count, pathological_fraction, seed=seed, noise_sigma=noise_sigma
        )
    except ValueError as e:
        _fail(EXIT_CONFIG, str(e))
    os.makedirs(out_dir, exist_ok=True)
    for s in subjects:
        with open(os.path.join(out_dir, s.id + ".nii"), "wb") as f:
            f.write(write_nifti(s.image, 16))
        with open(os.path.join(out_dir, s.id + "_gt.nii"), "wb") as f:
            f.write(write_nifti(s.labels, 2))
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["id", "image", "labels", "pathological"])
        w.writeheader()
        for s in subjects:
            w.writerow(
                {
                    "id": s.id,
                    "image": s.id + ".nii",
                    "labels": s.id + "_gt.nii",
                    "pathological": int(bool(s.pathological)),
                }
            )
    click.echo(f"wrote {len(subjects)} phantoms to {out_dir}")


_SEG_OPTIONS = [
    click.option("--variant", type=click.Choice(pipeline.VARIANTS), default=None),
    click.option("--myo-seg", type=click.Choice(pipeline.MYO_SEGMENTERS), default=None),
    click.option(
        "--scar-seg", type=click.Choice(pipeline.SCAR_SEGMENTERS), default=None
    ),
    click.option("--regressor", type=click.Choice(pipeline.REGRESSORS), default=None),
    click.option("--seed", type=int, default=None),
    click.option("--config", "config_file", type=click.Path(exists=True), default=None),
    click.option("--flip-slices", is_flag=True),
]


def _with_seg_options(cmd):
    for opt in reversed(_SEG_OPTIONS):
        cmd = opt(cmd)
    return cmd


@main.command("segment")
@click.option("-i", "--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--no-figures", is_flag=True)
@_with_seg_options
def segment_cmd(
    input_path, out_dir, no_figures, variant, myo_seg, scar_seg, regressor, seed,
    config_file, flip_slices,
):
    """Run the cascaded pipeline over a dataset and write the report."""
    try:
        config = _build_config(variant, myo_seg, scar_seg, regressor, seed, config_file)
    except (ConfigError, InputError) as e:
        _fail(EXIT_CONFIG if isinstance(e, ConfigError) else EXIT_INPUT, str(e))
    try:
        subjects = load_dataset(input_path, flip_slices=flip_slices)
    except InputError as e:
        _fail(EXIT_INPUT, str(e))
    reports = []
    try:
        for s in subjects:
            reports.append(pipeline.run_subject(s, config))
    except ConfigError as e:
        _fail(EXIT_CONFIG, str(e))
    report.write_report(reports, out_dir, figures=not no_figures)
    n_err = sum(len(r.errors) for r in reports)
    click.echo(f"processed {len(reports)} subjects, {n_err} per-slice failures")
    if n_err:
        sys.exit(EXIT_PARTIAL)


@main.command("qc")
@click.option("-i", "--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", default="-", help="CSV output path or - for stdout.")
def qc_cmd(input_path, output):
    """Standalone closedness checks over label volumes."""
    try:
        subjects = load_dataset(input_path)
    except InputError as e:
        _fail(EXIT_INPUT, str(e))
    rows = []
    for s in subjects:
        if s.labels is None:
            continue
        wall = np.isin(s.labels.data, (2, 3))
        for k, sl in enumerate(wall):
            rows.append(
                {
                    "subject": s.id,
                    "slice": k,
                    "closed": int(qc.is_closed_myocardium(sl)),
                }
            )
    out = sys.stdout if output == "-" else open(output, "w", newline="")
    try:
        w = csv.DictWriter(out, fieldnames=["subject", "slice", "closed"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()


@main.command("synth")
@click.option("-i", "--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--per-subject", default=2, show_default=True,
              help="Augmented label sets generated per labeled subject.")
@click.option("--seed", default=0, show_default=True)
def synth_cmd(input_path, out_dir, per_subject, seed):
    """Emit an augmented + swapped synthetic dataset with a manifest."""
    try:
        subjects = load_dataset(input_path)
    except InputError as e:
        _fail(EXIT_INPUT, str(e))
    labeled = [s for s in subjects if s.labels is not None]
    if not labeled:
        _fail(EXIT_INPUT, "no labeled subjects to augment")
    requests = build_synthesis_requests(labeled, per_subject, seed)
    rows = synthesis.emit_dataset(requests, out_dir, root_seed=seed)
    click.echo(f"wrote {len(rows)} synthetic subjects to {out_dir}")


def build_synthesis_requests(subjects, per_subject: int, seed: int):
    """Augmented-label requests for every subject plus pathology-crossed
    label/style swaps."""
    rng = np.random.default_rng(seed)
    requests = []
    for s in subjects:
        for j in range(per_subject):
            spec = synthesis.LabelAugSpec(
                rotation_deg=int(rng.choice(synthesis.ROTATION_CHOICES)),
                elastic_seed=int(rng.integers(0, 2**31 - 1)),
                morph_op=str(rng.choice(["none", "dilate", "open"])),
            )
            aug_labels = synthesis.apply_label_aug(s.labels, spec)
            stage = "scar" if bool(np.any(aug_labels.data == 3)) else "myocardium"
            requests.append(
                synthesis.SynthesisRequest(
                    output_id=f"{s.id}_aug{j}",
                    labels=aug_labels,
                    style=s,
                    stage=stage,
                    aug=spec,
                    source_subject=s.id,
                )
            )
    normal = [s for s in subjects if s.pathological is False]
    path = [s for s in subjects if s.pathological]
    for a, b in zip(path, normal):
        requests.append(synthesis.swap_label_style(a, b))
        requests.append(synthesis.swap_label_style(b, a))
    return requests


@main.command("metrics")
@click.option("--manual", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--auto", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("-o", "--output", default="-")
def metrics_cmd(manual, auto, output):
    """Per-class DSC between two directories of label volumes."""

    def load_labels(d):
        out = {}
        for f in sorted(os.listdir(d)):
            if f.endswith(".nii"):
                out[f[:-4]] = _read_volume(os.path.join(d, f), labels=True)
        return out

    try:
        man = load_labels(manual)
        aut = load_labels(auto)
    except InputError as e:
        _fail(EXIT_INPUT, str(e))
    common = sorted(set(man) & set(aut))
    if not common:
        _fail(EXIT_INPUT, "no common subjects between the two directories")
    rows = []
    for sid in common:
        a: LabelMap = man[sid]
        b: LabelMap = aut[sid]
        if a.dims != b.dims:
            _fail(EXIT_INPUT, f"{sid}: dims differ {a.dims} vs {b.dims}")
        for cls, name in ((2, "myocardium"), (3, "scar")):
            rows.append(
                {
                    "subject_id": sid,
                    "class": name,
                    "dsc": dice(a.data == cls, b.data == cls),
                }
            )
    out = sys.stdout if output == "-" else open(output, "w", newline="")
    try:
        w = csv.DictWriter(out, fieldnames=["subject_id", "class", "dsc"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if out is not sys.stdout:
            out.close()


@main.command("ablate")
@click.option("-i", "--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--variants", default="a,d", show_default=True)
@click.option("--myo-seg", default="em")
@click.option("--scar-seg", default="nsd")
@click.option("--seed", type=int, default=0)
def ablate_cmd(input_path, out_dir, variants, myo_seg, scar_seg, seed):
    """Run several pipeline variants and compare per-slice DSC."""
    names = [v.strip() for v in variants.split(",") if v.strip()]
    try:
        configs = {
            v: pipeline.PipelineConfig(
                variant=v, myo_seg=myo_seg, scar_seg=scar_seg, seed=seed
            ).validate()
            for v in names
        }
        subjects = load_dataset(input_path)
        result = pipeline.run_ablation(subjects, configs)
    except ConfigError as e:
        _fail(EXIT_CONFIG, str(e))
    except InputError as e:
        _fail(EXIT_INPUT, str(e))
    report.write_ablation(result, out_dir)
    for s in result.summaries:
        click.echo(
            f"{s['config']} {s['class']}: {s['mean_dsc']:.3f} ({s['sd_dsc']:.3f})"
        )


@main.command("report")
@click.option("-i", "--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--out-dir", required=True, type=click.Path(file_okay=False))
@_with_seg_options
def report_cmd(
    input_path, out_dir, variant, myo_seg, scar_seg, regressor, seed, config_file,
    flip_slices,
):
    """Run the pipeline and emit CSV/JSON plus scatter and Bland-Altman
    figures."""
    try:
        config = _build_config(variant, myo_seg, scar_seg, regressor, seed, config_file)
        subjects = load_dataset(input_path, flip_slices=flip_slices)
        reports = [pipeline.run_subject(s, config) for s in subjects]
    except ConfigError as e:
        _fail(EXIT_CONFIG, str(e))
    except (InputError, ScarQuantError) as e:
        _fail(EXIT_INPUT, str(e))
    report.write_report(reports, out_dir, figures=True)
    n_err = sum(len(r.errors) for r in reports)
    click.echo(f"report written to {out_dir}")
    if n_err:
        sys.exit(EXIT_PARTIAL)


if __name__ == "__main__":
    main()
