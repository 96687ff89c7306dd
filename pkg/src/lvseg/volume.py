"""Voxel-grid data model and the on-disk ``.mvol`` / ``.mmask`` format.

Arrays are indexed ``[i, j, k]`` with shape ``(nx, ny, nz)``.  On disk the
payload is written x-fastest (Fortran order), so slice ``k`` is one
contiguous block of ``nx * ny`` values.

File layout::

    <UTF-8 JSON header>\\n<little-endian payload>

Images are stored as float32, masks as uint8 (0 or 1).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

INTENSITY_STATES = ("raw", "bias_corrected", "standardized")
STANDARD_MAX = 1023.0

IMAGE_SUFFIX = ".mvol"
MASK_SUFFIX = ".mmask"


class VolumeFormatError(ValueError):
    """Raised when a volume file or value violates the format contract."""


@dataclass(frozen=True)
class Spacing:
    x_mm: float
    y_mm: float
    z_mm: float

    def __post_init__(self):
        for name in ("x_mm", "y_mm", "z_mm"):
            v = float(getattr(self, name))
            if not math.isfinite(v) or v <= 0:
                raise ValueError(f"spacing {name} must be positive and finite, got {v}")
            object.__setattr__(self, name, v)
        if not 0.5 <= self.z_mm <= 10.0:
            raise ValueError(f"slice spacing {self.z_mm} mm outside [0.5, 10]")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x_mm, self.y_mm, self.z_mm)

    @property
    def voxel_mm3(self) -> float:
        return self.x_mm * self.y_mm * self.z_mm


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_dims(shape) -> tuple[int, int, int]:
    if len(shape) != 3 or any(int(s) < 1 for s in shape):
        raise ValueError(f"expected a 3D grid with positive dims, got shape {shape}")
    return tuple(int(s) for s in shape)


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3D scalar image on a physical grid.

    Voxels are held as float32 so that the value written to disk is exactly
    the value in memory.
    """

    voxels: np.ndarray
    spacing: Spacing
    site_id: str = ""
    intensity_state: str = "raw"
    acpc_z: Optional[int] = None

    def __post_init__(self):
        arr = np.array(self.voxels, dtype=np.float32, copy=True)
        _check_dims(arr.shape)
        if not np.all(np.isfinite(arr)):
            raise ValueError("volume contains non-finite voxels")
        if self.intensity_state not in INTENSITY_STATES:
            raise ValueError(f"unknown intensity_state {self.intensity_state!r}")
        if self.intensity_state == "standardized" and (arr.min() < 0 or arr.max() > STANDARD_MAX):
            raise ValueError("standardized volume has values outside [0, 1023]")
        if self.acpc_z is not None:
            z = int(self.acpc_z)
            if not 0 <= z < arr.shape[2]:
                raise ValueError(f"acpc_z {z} outside [0, {arr.shape[2]})")
            object.__setattr__(self, "acpc_z", z)
        object.__setattr__(self, "voxels", _frozen(arr))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def replace(self, **changes) -> "Volume":
        kw = dict(voxels=self.voxels, spacing=self.spacing, site_id=self.site_id,
                  intensity_state=self.intensity_state, acpc_z=self.acpc_z)
        kw.update(changes)
        return Volume(**kw)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return (self.spacing == other.spacing and self.site_id == other.site_id
                and self.intensity_state == other.intensity_state
                and self.acpc_z == other.acpc_z
                and self.voxels.shape == other.voxels.shape
                and self.voxels.tobytes() == other.voxels.tobytes())

    __hash__ = None


@dataclass(frozen=True, eq=False)
class BinaryMask:
    bits: np.ndarray
    spacing: Spacing
    site_id: str = ""
    acpc_z: Optional[int] = None

    def __post_init__(self):
        raw = np.asarray(self.bits)
        if raw.dtype != bool:
            if not np.all((raw == 0) | (raw == 1)):
                raise ValueError("mask values must be 0 or 1")
        arr = np.array(raw, dtype=bool, copy=True)
        _check_dims(arr.shape)
        if self.acpc_z is not None:
            z = int(self.acpc_z)
            if not 0 <= z < arr.shape[2]:
                raise ValueError(f"acpc_z {z} outside [0, {arr.shape[2]})")
            object.__setattr__(self, "acpc_z", z)
        object.__setattr__(self, "bits", _frozen(arr))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.bits.shape

    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def with_bits(self, bits) -> "BinaryMask":
        return BinaryMask(bits, self.spacing, self.site_id, self.acpc_z)

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (self.spacing == other.spacing and self.site_id == other.site_id
                and self.acpc_z == other.acpc_z
                and np.array_equal(self.bits, other.bits))

    __hash__ = None


def check_congruent(a, b) -> None:
    """Raise ``ValueError`` unless two grids share dims and spacing."""
    if a.dims != b.dims or a.spacing != b.spacing:
        raise ValueError(f"grid mismatch: {a.dims}@{a.spacing.as_tuple()} vs "
                         f"{b.dims}@{b.spacing.as_tuple()}")


def mask_volume_ml(m: BinaryMask) -> float:
    """Physical volume of the true voxels in millilitres."""
    return m.count() * m.spacing.voxel_mm3 / 1000.0


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _header(v: Union[Volume, BinaryMask]) -> dict:
    is_mask = isinstance(v, BinaryMask)
    return {
        "kind": "mask" if is_mask else "image",
        "dims": list(v.dims),
        "spacing": list(v.spacing.as_tuple()),
        "site_id": v.site_id,
        "intensity_state": None if is_mask else v.intensity_state,
        "acpc_z": v.acpc_z,
    }


def encode_volume(v: Union[Volume, BinaryMask]) -> bytes:
    if isinstance(v, BinaryMask):
        payload = np.asarray(v.bits, dtype=np.uint8).ravel(order="F").tobytes()
    elif isinstance(v, Volume):
        if not np.all(np.isfinite(v.voxels)):
            raise ValueError("refusing to write non-finite voxels")
        payload = v.voxels.astype("<f4").ravel(order="F").tobytes()
    else:
        raise TypeError(f"cannot encode {type(v).__name__}")
    head = json.dumps(_header(v), sort_keys=True, separators=(",", ":"))
    return head.encode("utf-8") + b"\n" + payload


def decode_volume(data: bytes) -> Union[Volume, BinaryMask]:
    nl = data.find(b"\n")
    if nl < 0:
        raise VolumeFormatError("malformed header: no newline")
    try:
        head = json.loads(data[:nl].decode("utf-8"))
        kind = head["kind"]
        dims = tuple(int(d) for d in head["dims"])
        spacing = Spacing(*head["spacing"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError) as exc:
        raise VolumeFormatError(f"malformed header: {exc}") from None
    if kind not in ("image", "mask") or len(dims) != 3:
        raise VolumeFormatError("malformed header: bad kind or dims")
    payload = data[nl + 1:]
    n = dims[0] * dims[1] * dims[2]
    itemsize = 1 if kind == "mask" else 4
    if len(payload) != n * itemsize:
        raise VolumeFormatError(
            f"payload length mismatch: expected {n * itemsize} bytes, got {len(payload)}")
    acpc_z = head.get("acpc_z")
    site_id = head.get("site_id", "")
    if kind == "mask":
        raw = np.frombuffer(payload, dtype=np.uint8)
        if raw.size and raw.max() > 1:
            raise VolumeFormatError("invalid mask byte")
        return BinaryMask(raw.reshape(dims, order="F").astype(bool), spacing, site_id, acpc_z)
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims, order="F")
    if not np.all(np.isfinite(arr)):
        raise VolumeFormatError("non-finite voxel in payload")
    return Volume(arr, spacing, site_id, head.get("intensity_state") or "raw", acpc_z)


def write_volume(v: Union[Volume, BinaryMask], path) -> None:
    Path(path).write_bytes(encode_volume(v))


def read_volume(path) -> Union[Volume, BinaryMask]:
    return decode_volume(Path(path).read_bytes())


@dataclass(frozen=True, eq=False)
class Scan:
    """One subject: standardized or raw image, its brain mask and metadata.

    ``truth`` is the reference ventricle mask when one exists.
    """

    image: Volume
    brain: BinaryMask
    case_id: str = ""
    site_id: str = ""
    acpc_z: Optional[int] = None
    truth: Optional[BinaryMask] = None
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        check_congruent(self.image, self.brain)
        if self.truth is not None:
            check_congruent(self.image, self.truth)
        if self.acpc_z is None and self.image.acpc_z is not None:
            object.__setattr__(self, "acpc_z", self.image.acpc_z)

    def replace(self, **changes) -> "Scan":
        kw = dict(image=self.image, brain=self.brain, case_id=self.case_id,
                  site_id=self.site_id, acpc_z=self.acpc_z, truth=self.truth,
                  tags=dict(self.tags))
        kw.update(changes)
        return Scan(**kw)
