"""Parametric short-axis LV phantom: annular myocardium with an
optional scar sector, analytic ground truth, noise and an optional
intensity ramp to mimic coil shading."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .volume import LabelMap, Spacing, SubjectRecord, Volume

DEFAULT_INTENSITIES = {"bg": 0.15, "cavity": 0.95, "myo": 0.45, "scar": 0.85}


@dataclass(frozen=True)
class PhantomSpec:
    nx: int = 256
    ny: int = 256
    nz: int = 4
    spacing: Spacing = Spacing(1.0, 1.0, 8.0)
    center: tuple | None = None  # (row, col) pixels; None = grid center
    inner_radius_mm: float = 32.0
    outer_radius_mm: float = 52.0
    apex_taper: float = 0.7  # radius scale at the last (apical) slice
    scar_theta: tuple | None = None  # (theta0, theta1) radians, None = no scar
    transmurality: float = 0.6  # scar band depth from the epicardial side
    intensities: dict = field(default_factory=lambda: dict(DEFAULT_INTENSITIES))
    noise_sigma: float = 0.0
    bias_amplitude: float = 0.0  # linear left-right intensity ramp
    bg_texture: float = 0.0  # amplitude of smooth background structure
    texture_sigma: float = 12.0
    band_rows: int = 0  # bright band near the top edge, like chest fat
    band_intensity: float = 0.9
    seed: int | None = None

    def __post_init__(self):
        if not (0 < self.inner_radius_mm < self.outer_radius_mm):
            raise ValueError("need 0 < inner radius < outer radius")
        if not (0 < self.transmurality <= 1):
            raise ValueError("transmurality must be in (0, 1]")
        if not (0 < self.apex_taper <= 1):
            raise ValueError("apex_taper must be in (0, 1]")


def _slice_labels(spec: PhantomSpec, k: int) -> np.ndarray:
    scale = 1.0
    if spec.nz > 1:
        scale = 1.0 - (1.0 - spec.apex_taper) * k / (spec.nz - 1)
    r = spec.inner_radius_mm * scale
    big_r = spec.outer_radius_mm * scale
    if spec.center is None:
        cr, cc = (spec.ny - 1) / 2.0, (spec.nx - 1) / 2.0
    else:
        cr, cc = spec.center
    ii, jj = np.meshgrid(np.arange(spec.ny), np.arange(spec.nx), indexing="ij")
    yy = (ii - cr) * spec.spacing.dy
    xx = (jj - cc) * spec.spacing.dx
    rho = np.hypot(xx, yy)
    labels = np.zeros((spec.ny, spec.nx), dtype=np.int16)
    labels[rho < r] = 1
    wall = (rho >= r) & (rho < big_r)
    labels[wall] = 2
    if spec.scar_theta is not None:
        t0, t1 = spec.scar_theta
        theta = np.mod(np.arctan2(yy, xx), 2 * np.pi)
        in_sector = np.mod(theta - t0, 2 * np.pi) < np.mod(t1 - t0, 2 * np.pi)
        scar_band = rho >= big_r - spec.transmurality * (big_r - r)
        labels[wall & in_sector & scar_band] = 3
    return labels


def generate_phantom(spec: PhantomSpec, subject_id: str = "phantom") -> SubjectRecord:
    """Rasterize one phantom subject with analytic labels."""
    half_x = (spec.nx - 1) / 2.0 * spec.spacing.dx
    half_y = (spec.ny - 1) / 2.0 * spec.spacing.dy
    if spec.center is None and spec.outer_radius_mm >= min(half_x, half_y):
        raise ValueError("outer radius does not fit on the grid")
    labels = np.stack([_slice_labels(spec, k) for k in range(spec.nz)])
    lut = np.array(
        [
            spec.intensities["bg"],
            spec.intensities["cavity"],
            spec.intensities["myo"],
            spec.intensities["scar"],
        ]
    )
    img = lut[labels].astype(np.float64)
    rng = np.random.default_rng(spec.seed)
    if spec.bg_texture:
        from scipy.ndimage import gaussian_filter

        # smooth pseudo-anatomy outside the LV so percentile
        # normalization sees a realistic intensity spread
        for k in range(spec.nz):
            fld = gaussian_filter(
                rng.normal(0.0, 1.0, (spec.ny, spec.nx)), spec.texture_sigma
            )
            fld *= spec.bg_texture / max(np.abs(fld).max(), 1e-12)
            img[k][labels[k] == 0] += np.abs(fld)[labels[k] == 0]
    if spec.band_rows:
        # a bright near-edge structure keeps the upper percentile of the
        # frame close to tissue intensity, as fat does in a real scan
        r0 = min(8, spec.ny - spec.band_rows)
        img[:, r0 : r0 + spec.band_rows, :] = spec.band_intensity
    if spec.bias_amplitude:
        ramp = np.linspace(-1.0, 1.0, spec.nx)[None, None, :]
        img = img + spec.bias_amplitude * ramp
    if spec.noise_sigma:
        img = img + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    pathological = spec.scar_theta is not None
    return SubjectRecord(
        id=subject_id,
        image=Volume(img.astype(np.float32), spec.spacing),
        labels=LabelMap(labels, spec.spacing),
        pathological=pathological,
        meta={"spec": spec},
    )


def generate_population(
    n: int,
    pathological_fraction: float = 0.70,
    seed: int | None = None,
    noise_sigma: float = 0.02,
    bias_amplitude: float = 0.0,
    bg_texture: float = 0.25,
    nz: int = 4,
    grid: int = 256,
) -> list[SubjectRecord]:
    """n randomized phantoms; exactly round(n * fraction) carry scar.
    Deterministic per seed."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    n_path = int(round(n * pathological_fraction))
    subjects = []
    for i in range(n):
        pathological = i < n_path
        scar_theta = None
        if pathological:
            t0 = rng.uniform(0, 2 * np.pi)
            t0 = float(t0)
            scar_theta = (t0, t0 + float(rng.uniform(0.6, 2.2)))
        inner = float(rng.uniform(28.0, 36.0))
        outer = inner + float(rng.uniform(14.0, 20.0))
        jitter = rng.uniform(-15.0, 15.0, size=2)
        center = ((grid - 1) / 2.0 + jitter[0], (grid - 1) / 2.0 + jitter[1])
        spec = PhantomSpec(
            nx=grid,
            ny=grid,
            nz=nz,
            # 1.8 mm in-plane pixels put the epicardium at a realistic
            # 25-31 px radius so the wall fits the scar-stage window
            spacing=Spacing(1.8, 1.8, 8.0),
            center=center,
            inner_radius_mm=inner,
            outer_radius_mm=outer,
            apex_taper=float(rng.uniform(0.6, 0.85)),
            scar_theta=scar_theta,
            transmurality=float(rng.uniform(0.4, 0.8)),
            intensities={"bg": 0.15, "cavity": 0.92, "myo": 0.55, "scar": 0.88},
            noise_sigma=noise_sigma,
            bias_amplitude=bias_amplitude,
            bg_texture=bg_texture,
            band_rows=12,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        subjects.append(generate_phantom(spec, subject_id=f"phantom_{i:03d}"))
    return subjects
