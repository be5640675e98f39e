"""Evaluation metrics: Dice, Hausdorff (mm), volumes, scar burden,
Pearson, Bland-Altman, classification accuracy and the Wilcoxon
signed-rank test."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import erf, sqrt

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateInputError
from .volume import Spacing, voxel_volume_cm3


@dataclass(frozen=True)
class PairedSeries:
    """Per-subject manual vs automatic measurements."""

    manual: np.ndarray
    automatic: np.ndarray

    def __post_init__(self):
        if len(self.manual) != len(self.automatic):
            raise ValueError("paired series must have equal length")
        if len(self.manual) < 2:
            raise ValueError("paired series needs at least 2 entries")


@dataclass(frozen=True)
class AgreementResult:
    bias: float
    loa_low: float
    loa_high: float
    sd: float


def dice(a_mask: np.ndarray, b_mask: np.ndarray) -> float:
    """2|A n B| / (|A| + |B|); two empty masks score 1.0."""
    a = np.asarray(a_mask, dtype=bool)
    b = np.asarray(b_mask, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask dims differ: {a.shape} vs {b.shape}")
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / denom


def boundary_voxels(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a face (6-connected) neighbor outside the
    mask; voxels on the grid border count as boundary."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim == 2:
        m = m[None]
    padded = np.pad(m, 1, constant_values=False)
    interior = np.ones_like(m)
    for axis in range(3):
        lo = [slice(1, -1)] * 3
        hi = [slice(1, -1)] * 3
        lo[axis] = slice(0, -2)
        hi[axis] = slice(2, None)
        interior &= padded[tuple(lo)] & padded[tuple(hi)]
    return m & ~interior


def hausdorff_mm(
    a_mask: np.ndarray,
    b_mask: np.ndarray,
    spacing: Spacing,
    percentile: float = 100.0,
) -> float:
    """Symmetric Hausdorff distance (mm) between boundary voxel centers,
    anisotropically scaled. percentile=95 gives the HD95 variant."""
    a = np.asarray(a_mask, dtype=bool)
    b = np.asarray(b_mask, dtype=bool)
    if a.shape != b.shape:
        raise ValueError("mask dims differ")
    if not a.any() or not b.any():
        raise DegenerateInputError("hausdorff undefined for an empty mask")
    scale = np.array([spacing.dz, spacing.dy, spacing.dx])
    pa = np.argwhere(boundary_voxels(a)) * scale
    pb = np.argwhere(boundary_voxels(b)) * scale
    d_ab = cKDTree(pb).query(pa)[0]
    d_ba = cKDTree(pa).query(pb)[0]
    if percentile >= 100.0:
        return float(max(d_ab.max(), d_ba.max()))
    return float(max(np.percentile(d_ab, percentile), np.percentile(d_ba, percentile)))


def mask_volume_cm3(mask: np.ndarray, spacing: Spacing) -> float:
    return int(np.count_nonzero(mask)) * voxel_volume_cm3(spacing)


def volume_difference(a_mask, b_mask, spacing: Spacing) -> float:
    """|vol(a) - vol(b)| in cm^3."""
    return abs(mask_volume_cm3(a_mask, spacing) - mask_volume_cm3(b_mask, spacing))


def scar_burden(scar_mask, myo_mask, spacing: Spacing) -> float:
    """Scar volume as a percentage of the total wall (myocardium incl.
    scar)."""
    scar = np.asarray(scar_mask, dtype=bool)
    myo = np.asarray(myo_mask, dtype=bool)
    wall = int(np.count_nonzero(myo | scar))
    if wall == 0:
        raise DegenerateInputError("empty wall, scar burden undefined")
    return 100.0 * int(np.count_nonzero(scar)) / wall


def pearson_r(series: PairedSeries) -> float:
    x = np.asarray(series.manual, dtype=np.float64)
    y = np.asarray(series.automatic, dtype=np.float64)
    return float(np.corrcoef(x, y)[0, 1])


def bland_altman(series: PairedSeries) -> AgreementResult:
    """Bias and 1.96-sd limits of agreement of automatic - manual."""
    d = np.asarray(series.automatic, dtype=np.float64) - np.asarray(
        series.manual, dtype=np.float64
    )
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    return AgreementResult(bias, bias - 1.96 * sd, bias + 1.96 * sd, sd)


def classification_accuracy(pred_has_scar, gt_has_scar) -> float:
    """Percent of subjects whose scar-present call matches ground truth."""
    p = np.asarray(pred_has_scar, dtype=bool)
    g = np.asarray(gt_has_scar, dtype=bool)
    if p.shape != g.shape:
        raise ValueError("prediction/truth length mismatch")
    if p.size == 0:
        raise ValueError("no subjects to classify")
    return 100.0 * int(np.count_nonzero(p == g)) / p.size


def _rank_with_ties(a: np.ndarray) -> np.ndarray:
    order = np.argsort(a, kind="stable")
    ranks = np.empty(len(a), dtype=np.float64)
    i = 0
    sorted_a = a[order]
    while i < len(a):
        j = i
        while j < len(a) and sorted_a[j] == sorted_a[i]:
            j += 1
        ranks[order[i:j]] = (i + j + 1) / 2.0  # mid-rank, 1-based
        i = j
    return ranks


EXACT_WILCOXON_LIMIT = 12


def wilcoxon_signed_rank(differences, alternative: str = "two-sided") -> float:
    """Wilcoxon signed-rank p-value for paired differences.

    Zeros are dropped, ties mid-ranked. Exact by enumerating all sign
    patterns for n <= 12, otherwise a normal approximation with tie
    correction (no continuity correction).
    """
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    d = np.asarray(differences, dtype=np.float64)
    d = d[d != 0]
    n = len(d)
    if n == 0:
        raise DegenerateInputError("all differences are zero")
    ranks = _rank_with_ties(np.abs(d))
    w_pos = float(ranks[d > 0].sum())

    if n <= EXACT_WILCOXON_LIMIT:
        total = 2**n
        ge = le = 0
        for r in range(n + 1):
            for subset in combinations(range(n), r):
                w = ranks[list(subset)].sum()
                if w >= w_pos:
                    ge += 1
                if w <= w_pos:
                    le += 1
        p_greater = ge / total
        p_less = le / total
    else:
        mean = n * (n + 1) / 4.0
        tie_term = 0.0
        _, counts = np.unique(np.abs(d), return_counts=True)
        tie_term = float(np.sum(counts**3 - counts)) / 48.0
        var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
        z = (w_pos - mean) / sqrt(var)
        p_greater = 0.5 * (1 - erf(z / sqrt(2)))
        p_less = 0.5 * (1 + erf(z / sqrt(2)))

    if alternative == "greater":
        return p_greater
    if alternative == "less":
        return p_less
    return min(1.0, 2 * min(p_greater, p_less))
