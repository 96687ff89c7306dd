"""Binary morphology and connected-component analysis on ``BinaryMask`` grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import BinaryMask, Spacing

CONNECTIVITY = ("six", "twenty_six")


@dataclass(frozen=True)
class DiskElement:
    """Planar disk structuring element as a list of in-slice ``(dx, dy)`` offsets."""

    radius_px: int
    offsets: tuple[tuple[int, int], ...]


@dataclass(frozen=True, eq=False)
class LabeledComponents:
    labels: np.ndarray
    sizes: dict[int, int]
    centroids_mm: dict[int, tuple[float, float, float]]

    @property
    def count(self) -> int:
        return len(self.sizes)

    def ranked(self) -> list[int]:
        """Labels by size descending; ties broken by the smaller label."""
        return sorted(self.sizes, key=lambda lab: (-self.sizes[lab], lab))

    def mask_of(self, label: int) -> np.ndarray:
        return self.labels == label


def make_disk(radius_mm: float, spacing: Spacing) -> DiskElement:
    if radius_mm < 0:
        raise ValueError("radius must be non-negative")
    if abs(spacing.x_mm - spacing.y_mm) > 0.01 * spacing.x_mm:
        raise ValueError("disk element requires isotropic in-plane spacing")
    r = int(round(radius_mm / spacing.x_mm))
    offsets = tuple((dx, dy) for dx in range(-r, r + 1) for dy in range(-r, r + 1)
                    if dx * dx + dy * dy <= r * r)
    return DiskElement(r, offsets)


def erode_slicewise(m: BinaryMask, se: DiskElement) -> BinaryMask:
    """2D erosion of every slice; out-of-grid neighbours count as background."""
    bits = m.bits
    nx, ny, _ = bits.shape
    r = se.radius_px
    padded = np.zeros((nx + 2 * r, ny + 2 * r, bits.shape[2]), dtype=bool)
    padded[r:r + nx, r:r + ny] = bits
    out = bits.copy()
    for dx, dy in se.offsets:
        out &= padded[r + dx:r + dx + nx, r + dy:r + dy + ny]
        if not out.any():
            break
    return m.with_bits(out)


def _structure(connectivity: str) -> np.ndarray:
    if connectivity == "six":
        return ndimage.generate_binary_structure(3, 1)
    if connectivity == "twenty_six":
        return ndimage.generate_binary_structure(3, 3)
    raise ValueError(f"connectivity must be one of {CONNECTIVITY}, got {connectivity!r}")


def connected_components(m: BinaryMask, connectivity: str = "twenty_six") -> LabeledComponents:
    labels, n = ndimage.label(m.bits, structure=_structure(connectivity))
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    centroids = np.zeros((n + 1, 3))
    if n:
        idx = np.nonzero(labels)
        lab = labels[idx]
        for axis, step in enumerate(m.spacing.as_tuple()):
            sums = np.bincount(lab, weights=idx[axis] + 0.5, minlength=n + 1)
            centroids[1:, axis] = sums[1:] / sizes[1:] * step
    return LabeledComponents(
        labels=labels.astype(np.int32),
        sizes={i: int(sizes[i]) for i in range(1, n + 1)},
        centroids_mm={i: tuple(float(c) for c in centroids[i]) for i in range(1, n + 1)},
    )


def fill_holes(m: BinaryMask) -> BinaryMask:
    """Set every background region not 6-connected to the grid border."""
    background, n = ndimage.label(~m.bits, structure=_structure("six"))
    if n == 0:
        return m.with_bits(m.bits)
    border = np.zeros(n + 1, dtype=bool)
    for face in (background[0], background[-1], background[:, 0], background[:, -1],
                 background[:, :, 0], background[:, :, -1]):
        border[np.unique(face)] = True
    border[0] = True
    return m.with_bits(m.bits | ~border[background])


def centroid_mm(m: BinaryMask) -> tuple[float, float, float]:
    idx = np.nonzero(m.bits)
    if idx[0].size == 0:
        raise ValueError("centroid of an empty mask is undefined")
    sp = m.spacing.as_tuple()
    return tuple(float((idx[a].mean() + 0.5) * sp[a]) for a in range(3))
