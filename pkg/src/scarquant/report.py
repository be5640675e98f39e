"""Report emission: delimited per-slice/per-subject tables, QC event
logs and the scatter / Bland-Altman figures."""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .errors import InputError
from .metrics import AgreementResult, PairedSeries, bland_altman, pearson_r

ROW_FIELDS = [
    "subject_id",
    "slice",
    "class",
    "dsc",
    "dsc_slice_mean",
    "hd_mm",
    "vol_manual_cm3",
    "vol_auto_cm3",
    "vol_diff_cm3",
    "scar_burden_pct",
]
QC_FIELDS = ["subject", "slice", "event", "k", "fell_back"]


def collect_rows(reports) -> list[dict]:
    rows = []
    for rep in reports:
        for r in rep.slice_rows + rep.subject_rows:
            rows.append({f: r.get(f, "") for f in ROW_FIELDS})
    return rows


def write_report(reports, out_dir, figures: bool = True) -> dict:
    """Write metrics.csv, qc_events.csv, report.json and (optionally)
    scatter/Bland-Altman figures; returns the JSON payload."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise InputError(f"cannot create report dir {out_dir}: {e}") from e
    rows = collect_rows(reports)
    with open(os.path.join(out_dir, "metrics.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=ROW_FIELDS)
        w.writeheader()
        w.writerows(rows)
    qc_events = [e for rep in reports for e in rep.qc_events]
    with open(os.path.join(out_dir, "qc_events.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=QC_FIELDS)
        w.writeheader()
        w.writerows(qc_events)

    payload = {
        "subjects": [rep.subject_id for rep in reports],
        "rows": rows,
        "qc_events": qc_events,
        "errors": [e for rep in reports for e in rep.errors],
        "scar_present": {rep.subject_id: rep.scar_present for rep in reports},
    }
    agreement = _volume_agreement(reports)
    if agreement:
        payload["agreement"] = agreement
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(payload, f, indent=2)

    if figures:
        render_figures(reports, out_dir)
    return payload


def _volume_pairs(reports, cls):
    manual, auto = [], []
    for rep in reports:
        for r in rep.subject_rows:
            if r["class"] == cls and r["vol_manual_cm3"] != "":
                manual.append(float(r["vol_manual_cm3"]))
                auto.append(float(r["vol_auto_cm3"]))
    return np.array(manual), np.array(auto)


def _volume_agreement(reports) -> dict:
    out = {}
    for cls in ("myocardium", "scar"):
        manual, auto = _volume_pairs(reports, cls)
        if len(manual) < 2:
            continue
        series = PairedSeries(manual, auto)
        ba = bland_altman(series)
        out[cls] = {
            "pearson_r": pearson_r(series) if np.std(manual) > 0 else None,
            "bias_cm3": ba.bias,
            "loa_low_cm3": ba.loa_low,
            "loa_high_cm3": ba.loa_high,
        }
    return out


def render_figures(reports, out_dir) -> list[str]:
    """Per class: manual-vs-automatic volume scatter and Bland-Altman
    plot, written as PNG files next to the delimited output."""
    written = []
    for cls in ("myocardium", "scar"):
        manual, auto = _volume_pairs(reports, cls)
        if len(manual) < 2:
            continue
        series = PairedSeries(manual, auto)

        fig, ax = plt.subplots(figsize=(5, 5))
        ax.scatter(manual, auto, s=18, color="#2a6f97")
        lim = max(manual.max(), auto.max()) * 1.05 or 1.0
        ax.plot([0, lim], [0, lim], "k--", lw=0.8)
        if np.std(manual) > 0:
            ax.set_title(f"{cls} volume, r = {pearson_r(series):.3f}")
        else:
            ax.set_title(f"{cls} volume")
        ax.set_xlabel("manual volume (cm$^3$)")
        ax.set_ylabel("automatic volume (cm$^3$)")
        path = os.path.join(out_dir, f"scatter_{cls}.png")
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)

        ba: AgreementResult = bland_altman(series)
        means = (manual + auto) / 2.0
        diffs = auto - manual
        fig, ax = plt.subplots(figsize=(5.5, 4))
        ax.scatter(means, diffs, s=18, color="#bc4749")
        for y, style in ((ba.bias, "-"), (ba.loa_low, "--"), (ba.loa_high, "--")):
            ax.axhline(y, color="gray", linestyle=style, lw=0.9)
        ax.set_title(f"{cls}: bias {ba.bias:.2f} cm$^3$, LoA ±{1.96 * ba.sd:.2f}")
        ax.set_xlabel("mean of methods (cm$^3$)")
        ax.set_ylabel("automatic − manual (cm$^3$)")
        path = os.path.join(out_dir, f"bland_altman_{cls}.png")
        fig.savefig(path, dpi=120, bbox_inches="tight")
        plt.close(fig)
        written.append(path)
    return written


def write_ablation(result, out_dir) -> None:
    """Delimited ablation output: per-slice DSC rows, summary and
    pairwise Wilcoxon table, plus a DSC distribution figure."""
    os.makedirs(out_dir, exist_ok=True)
    for name, rows, fields in (
        (
            "ablation_slices.csv",
            result.slice_rows,
            ["config", "subject_id", "slice", "dsc_myocardium", "dsc_scar"],
        ),
        (
            "ablation_summary.csv",
            result.summaries,
            ["config", "class", "mean_dsc", "sd_dsc", "n_slices"],
        ),
        (
            "ablation_pairwise.csv",
            result.pairwise,
            ["config_a", "config_b", "class", "p"],
        ),
    ):
        with open(os.path.join(out_dir, name), "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields)
            w.writeheader()
            w.writerows(rows)

    configs = sorted({r["config"] for r in result.slice_rows})
    fig, axes = plt.subplots(1, 2, figsize=(9, 4), sharey=True)
    for ax, key, title in (
        (axes[0], "dsc_myocardium", "myocardium"),
        (axes[1], "dsc_scar", "scar"),
    ):
        data = [
            [r[key] for r in result.slice_rows if r["config"] == c] for c in configs
        ]
        ax.boxplot(data, tick_labels=configs)
        ax.set_title(title)
        ax.set_ylabel("per-slice DSC")
    fig.savefig(os.path.join(out_dir, "ablation_dsc.png"), dpi=120, bbox_inches="tight")
    plt.close(fig)
