"""Quality control: connected components, myocardium closedness,
ensemble re-voting over jittered boxes and the small-scar ratio filter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError

JITTER_LO = 0.14
JITTER_HI = 0.21
MIN_SCAR_RATIO = 0.03


@dataclass(frozen=True)
class ComponentSet:
    """Dense component labeling: 0 = background, ids 1..N assigned by
    raster order of each component's first pixel."""

    label_grid: np.ndarray
    sizes: np.ndarray
    connectivity: int

    @property
    def n_components(self) -> int:
        return len(self.sizes)


@dataclass(frozen=True)
class VoteResult:
    mask: np.ndarray
    k: int
    closed: bool
    fell_back: bool


def _row_runs(row: np.ndarray):
    """Maximal runs of True in a 1D bool array as (start, stop) pairs."""
    padded = np.concatenate(([False], row, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return edges.reshape(-1, 2)


def connected_components(mask: np.ndarray, connectivity: int = 8) -> ComponentSet:
    """Two-pass union-find labeling of a 2D binary mask, operating on
    row runs. Final ids are dense 1..N in raster order of each
    component's first pixel."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    parent: list[int] = []

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    # first pass: provisional label per run, unions against previous row
    reach = 0 if connectivity == 4 else 1
    rows_runs = []
    prev = []  # (start, stop, label) of previous row
    for r in range(h):
        cur = []
        for start, stop in _row_runs(m[r]):
            lab = len(parent)
            parent.append(lab)
            for ps, pe, pl in prev:
                if ps < stop + reach and pe > start - reach:
                    ra, rb = find(lab), find(pl)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
            cur.append((int(start), int(stop), lab))
        rows_runs.append(cur)
        prev = cur

    # second pass: dense relabel; provisional labels were created in
    # raster order, so ordering roots by their minimal member preserves
    # first-pixel raster order
    remap: dict[int, int] = {}
    sizes: list[int] = []
    out = np.zeros((h, w), dtype=np.int32)
    for r in range(h):
        for start, stop, lab in rows_runs[r]:
            root = find(lab)
            if root not in remap:
                remap[root] = len(remap) + 1
                sizes.append(0)
            cid = remap[root]
            out[r, start:stop] = cid
            sizes[cid - 1] += stop - start
    return ComponentSet(out, np.asarray(sizes, dtype=np.int64), connectivity)


def is_closed_myocardium(myo_mask: np.ndarray) -> bool:
    """Closed = one 8-connected foreground component whose 4-connected
    complement has an interior hole (a component not touching the
    border)."""
    m = np.asarray(myo_mask, dtype=bool)
    if not m.any():
        return False
    if connected_components(m, 8).n_components != 1:
        return False
    return _interior_components(m) is not None


def _interior_components(m: np.ndarray):
    """Union of 4-connected complement components not touching the
    border, or None if there are none."""
    comp = connected_components(~m, 4)
    border_ids = set(np.unique(comp.label_grid[0, :])) | set(
        np.unique(comp.label_grid[-1, :])
    )
    border_ids |= set(np.unique(comp.label_grid[:, 0])) | set(
        np.unique(comp.label_grid[:, -1])
    )
    interior = np.zeros_like(m)
    found = False
    for cid in range(1, comp.n_components + 1):
        if cid not in border_ids:
            interior |= comp.label_grid == cid
            found = True
    return interior if found else None


def interior_of(myo_mask: np.ndarray) -> np.ndarray:
    """Cavity mask: the interior hole(s) of a closed myocardium ring."""
    m = np.asarray(myo_mask, dtype=bool)
    if not is_closed_myocardium(m):
        raise ValueError("myocardium is not closed, no interior exists")
    return _interior_components(m)


def jitter_boxes(box, count: int = 10, seed: int | None = None):
    """Translation-jittered copies of a box: per-axis offsets of
    magnitude U(0.14, 0.21) x side with random sign."""
    from .bbox import BoundingBox

    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        ux, uy = rng.uniform(JITTER_LO, JITTER_HI, size=2)
        sx, sy = rng.choice([-1.0, 1.0], size=2)
        out.append(
            BoundingBox(box.cx + sx * ux * box.w, box.cy + sy * uy * box.h, box.w, box.h)
        )
    return out


def ensemble_revote(
    predictions, original: np.ndarray, strict: bool = False, largest_k: bool = False
) -> VoteResult:
    """Sum the re-segmented predictions and threshold the vote count at
    the smallest k (1..n) producing a closed myocardium; fall back to
    the original prediction when no k closes.

    strict=True uses count > k instead of count >= k; largest_k=True
    searches from the most conservative (largest) k downward. Both
    default to the literal smallest-k / >= reading.
    """
    preds = [np.asarray(p, dtype=bool) for p in predictions]
    if len(preds) < 2:
        raise ValueError("need at least 2 predictions to vote")
    shape = preds[0].shape
    if any(p.shape != shape for p in preds) or np.asarray(original).shape != shape:
        raise ValueError("prediction masks must share dims")
    votes = np.sum(preds, axis=0)
    ks = range(len(preds), 0, -1) if largest_k else range(1, len(preds) + 1)
    for k in ks:
        cand = votes > k if strict else votes >= k
        if is_closed_myocardium(cand):
            return VoteResult(cand, k, True, False)
    orig = np.asarray(original, dtype=bool)
    return VoteResult(orig, 0, is_closed_myocardium(orig), True)


def scar_ratio_filter(
    scar_mask: np.ndarray, myo_mask: np.ndarray, min_ratio: float = MIN_SCAR_RATIO
) -> np.ndarray:
    """Drop 8-connected scar components whose size is strictly below
    min_ratio of the total wall (myocardium incl. scar)."""
    scar = np.asarray(scar_mask, dtype=bool)
    myo = np.asarray(myo_mask, dtype=bool)
    if not myo.any():
        raise DegenerateInputError("empty myocardium mask")
    wall = int(np.count_nonzero(myo | scar))
    comps = connected_components(scar, 8)
    out = np.zeros_like(scar)
    for cid in range(1, comps.n_components + 1):
        if comps.sizes[cid - 1] >= min_ratio * wall:
            out |= comps.label_grid == cid
    return out
