"""Random affine augmentation of image/mask slice pairs."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class AugmentConfig:
    rotate_deg: float = 10.0
    scale: tuple = (0.9, 1.1)
    shear_deg: float = 5.0
    translate_frac: float = 0.05
    probability: float = 0.5

    def __post_init__(self):
        vals = (self.rotate_deg, *self.scale, self.shear_deg, self.translate_frac)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("augmentation ranges must be finite")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.scale[0] <= 0 or self.scale[0] > self.scale[1]:
            raise ValueError("scale range must be positive and ordered")
        object.__setattr__(self, "scale", tuple(self.scale))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scale"] = list(self.scale)
        return d


@dataclass(frozen=True)
class AffineParams:
    rotate_deg: float = 0.0
    scale: float = 1.0
    shear_deg: float = 0.0
    translate_px: tuple = (0.0, 0.0)

    def matrix(self) -> np.ndarray:
        """Forward 2x2 map (output = M @ input about the centre)."""
        th = math.radians(self.rotate_deg)
        sh = math.tan(math.radians(self.shear_deg))
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        shear = np.array([[1.0, sh], [0.0, 1.0]])
        return rot @ shear * self.scale


def sample_affine(cfg: AugmentConfig, shape, rng: np.random.Generator) -> AffineParams:
    if rng.random() >= cfg.probability:
        return AffineParams()
    return AffineParams(
        rotate_deg=rng.uniform(-cfg.rotate_deg, cfg.rotate_deg),
        scale=rng.uniform(*cfg.scale),
        shear_deg=rng.uniform(-cfg.shear_deg, cfg.shear_deg),
        translate_px=tuple(rng.uniform(-cfg.translate_frac, cfg.translate_frac) * n for n in shape),
    )


def apply_affine(image: np.ndarray, mask: np.ndarray, params: AffineParams):
    if image.shape != mask.shape or image.ndim != 2:
        raise ValueError("image and mask must be congruent 2D arrays")
    if params == AffineParams():
        return image.copy(), mask.copy()
    fwd = params.matrix()
    inv = np.linalg.inv(fwd)
    center = (np.asarray(image.shape, dtype=float) - 1.0) / 2.0
    shift = np.asarray(params.translate_px, dtype=float)
    # output o samples input at inv @ (o - center - shift) + center
    offset = center - inv @ (center + shift)
    img = ndimage.affine_transform(image, inv, offset=offset, order=1, mode="constant", cval=0.0)
    msk = ndimage.affine_transform(mask.astype(np.float64), inv, offset=offset, order=0,
                                   mode="constant", cval=0.0) > 0.5
    return img, msk


def augment_pair(image: np.ndarray, mask: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    return apply_affine(image, mask, sample_affine(cfg, image.shape, rng))
