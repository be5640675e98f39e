"""Core volumetric types and a small bit-exact NIfTI-1 reader/writer.

Arrays are stored as numpy float32/uint8 grids with shape (nz, ny, nx),
slices ordered base->apex. Only the plain single-file .nii layout is
handled (348-byte header, no gzip, datatype codes 2/4/16).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import NiftiFormatError, RangeError, UnsupportedDatatypeError

# datatype code -> numpy dtype (without byte order)
_DTYPES = {2: "u1", 4: "i2", 16: "f4"}

CLASS_BACKGROUND = 0
CLASS_CAVITY = 1
CLASS_MYOCARDIUM = 2
CLASS_SCAR = 3
# EMIDEC ships MVO as class 4; it is merged into the scar class on ingest.
_CLASS_MVO = 4


@dataclass(frozen=True)
class Spacing:
    """Voxel size in mm: in-plane (dx, dy) and slice spacing dz."""

    dx: float
    dy: float
    dz: float

    def __post_init__(self):
        for v in (self.dx, self.dy, self.dz):
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"spacing must be positive and finite, got {self}")


@dataclass(frozen=True)
class Volume:
    """3D scalar grid. data shape (nz, ny, nx), slices base->apex."""

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("volume data must be 3D (nz, ny, nx)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("volume contains non-finite voxels")
        self.data.setflags(write=False)

    @property
    def dims(self):
        """(nx, ny, nz)"""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass(frozen=True)
class LabelMap:
    """3D class grid, values in {0 bg, 1 cavity, 2 myocardium, 3 scar}."""

    data: np.ndarray
    spacing: Spacing

    def __post_init__(self):
        if self.data.ndim != 3:
            raise ValueError("label data must be 3D (nz, ny, nx)")
        if not np.issubdtype(self.data.dtype, np.integer):
            raise ValueError("label data must be integer typed")
        bad = np.setdiff1d(np.unique(self.data), [0, 1, 2, 3])
        if bad.size:
            raise ValueError(f"invalid label classes {bad.tolist()}")
        self.data.setflags(write=False)

    @property
    def dims(self):
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)


@dataclass
class SubjectRecord:
    """One subject: image volume, optional labels, pathology flag."""

    id: str
    image: Volume
    labels: LabelMap | None = None
    pathological: bool | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.labels is not None and self.labels.dims != self.image.dims:
            raise ValueError(
                f"label dims {self.labels.dims} != image dims {self.image.dims}"
            )


def _detect_endianness(raw: bytes) -> str:
    if len(raw) < 348:
        raise NiftiFormatError("stream shorter than the 348-byte NIfTI-1 header")
    (le,) = struct.unpack_from("<i", raw, 0)
    if le == 348:
        return "<"
    (be,) = struct.unpack_from(">i", raw, 0)
    if be == 348:
        return ">"
    raise NiftiFormatError(f"sizeof_hdr is not 348 in either byte order ({le})")


def read_nifti(raw: bytes, labels: bool = False, flip_slices: bool = False):
    """Decode a single-file NIfTI-1 stream into a Volume or LabelMap.

    labels=True returns a LabelMap (MVO class 4 remapped to scar, 3).
    flip_slices reverses the stack for files stored apex->base.
    """
    bo = _detect_endianness(raw)
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise NiftiFormatError(f"bad magic {magic!r}")
    dim = struct.unpack_from(bo + "8h", raw, 40)
    datatype, bitpix = struct.unpack_from(bo + "2h", raw, 70)
    pixdim = struct.unpack_from(bo + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(bo + "3f", raw, 108)

    if datatype not in _DTYPES:
        raise UnsupportedDatatypeError(f"datatype code {datatype} not supported")
    if dim[0] < 1 or dim[0] > 7:
        raise NiftiFormatError(f"dim[0]={dim[0]} out of range")
    nx, ny, nz = (max(1, d) for d in dim[1:4])
    if any(max(1, d) != 1 for d in dim[4:8]):
        raise NiftiFormatError("4D+ volumes are not supported")
    dx, dy, dz = pixdim[1:4]
    try:
        spacing = Spacing(float(dx), float(dy), float(dz))
    except ValueError as e:
        raise NiftiFormatError(str(e)) from e

    dt = np.dtype(bo + _DTYPES[datatype])
    if dt.itemsize * 8 != bitpix:
        raise NiftiFormatError(f"bitpix {bitpix} inconsistent with datatype {datatype}")
    offset = int(round(vox_offset)) if vox_offset else 352
    count = nx * ny * nz
    need = offset + count * dt.itemsize
    if len(raw) < need:
        raise NiftiFormatError(f"payload truncated: need {need} bytes, have {len(raw)}")
    arr = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    arr = arr.reshape(nz, ny, nx)
    if bo == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    if scl_slope != 0.0 and not (scl_slope == 1.0 and scl_inter == 0.0):
        arr = arr * scl_slope + scl_inter
    if flip_slices:
        arr = arr[::-1]

    if labels:
        lab = np.rint(np.asarray(arr, dtype=np.float64)).astype(np.int16)
        lab[lab == _CLASS_MVO] = CLASS_SCAR
        try:
            return LabelMap(np.ascontiguousarray(lab), spacing)
        except ValueError as e:
            raise NiftiFormatError(str(e)) from e
    data = np.ascontiguousarray(arr, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise NiftiFormatError("volume contains non-finite voxels")
    return Volume(data, spacing)


def write_nifti(vol, datatype: int = 16) -> bytes:
    """Serialize a Volume or LabelMap; deterministic, so re-serialization
    of a read-back volume is byte-identical."""
    if datatype not in _DTYPES:
        raise UnsupportedDatatypeError(f"datatype code {datatype} not supported")
    data = np.asarray(vol.data)
    dt = np.dtype("<" + _DTYPES[datatype])
    if datatype in (2, 4):
        info = np.iinfo(dt)
        if data.min() < info.min or data.max() > info.max:
            raise RangeError(f"values outside {dt} range")
        if not np.all(np.equal(np.mod(data, 1), 0)):
            raise RangeError(f"non-integer values not representable as {dt}")
    payload = np.ascontiguousarray(data, dtype=dt).tobytes()

    nz, ny, nx = data.shape
    sp = vol.spacing
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    hdr[38] = ord("r")  # regular
    struct.pack_into("<8h", hdr, 40, 3, nx, ny, nz, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, dt.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, sp.dx, sp.dy, sp.dz, 0, 0, 0, 0)
    struct.pack_into("<3f", hdr, 108, 352.0, 1.0, 0.0)  # vox_offset, scl
    hdr[123] = 2  # spatial units: mm
    hdr[344:348] = b"n+1\x00"
    return bytes(hdr) + b"\x00\x00\x00\x00" + payload


def voxel_volume_cm3(spacing: Spacing) -> float:
    """Volume of one voxel in cm^3."""
    return spacing.dx * spacing.dy * spacing.dz / 1000.0


def volume_of_class(labelmap: LabelMap, cls: int) -> float:
    """Total volume (cm^3) of one label class."""
    if cls not in (0, 1, 2, 3):
        raise ValueError(f"class {cls} out of range")
    return int(np.count_nonzero(labelmap.data == cls)) * voxel_volume_cm3(
        labelmap.spacing
    )
