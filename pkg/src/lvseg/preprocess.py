"""Bias-field correction and decile-landmark intensity standardization.

Both steps are available as plain functions operating on one volume and as
scikit-learn transformers operating on sequences of scans.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .validation import as_scans, check_state
from .volume import STANDARD_MAX, BinaryMask, Volume, check_congruent

log = logging.getLogger(__name__)

MIN_BIAS_SUPPORT = 100
TARGET_LANDMARKS = tuple(float(v) for v in np.linspace(0.0, STANDARD_MAX, 11))

# exponents (px, py, pz) of the 10 monomials of total degree <= 2
MONOMIALS = ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
             (2, 0, 0), (0, 2, 0), (0, 0, 2), (1, 1, 0), (1, 0, 1), (0, 1, 1))


def normalized_coords(dims) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Voxel-centre coordinates mapped onto [-1, 1] along each axis."""
    axes = []
    for n in dims:
        c = (np.arange(n) + 0.5) / n * 2.0 - 1.0
        axes.append(c)
    return np.meshgrid(*axes, indexing="ij")


def design_matrix(x, y, z) -> np.ndarray:
    return np.stack([x ** a * y ** b * z ** c for a, b, c in MONOMIALS], axis=-1)


@dataclass(frozen=True)
class BiasModel:
    """Degree-2 polynomial model of the log bias field."""

    coefficients: tuple[float, ...]
    offset: float = 0.0  # added to intensities before the log when zeros were present

    def __post_init__(self):
        if len(self.coefficients) != len(MONOMIALS):
            raise ValueError(f"expected {len(MONOMIALS)} coefficients")

    def log_field(self, dims) -> np.ndarray:
        return design_matrix(*normalized_coords(dims)) @ np.asarray(self.coefficients)

    def field(self, dims) -> np.ndarray:
        return np.exp(self.log_field(dims))


def _kmeans_1d(values: np.ndarray, k: int, iters: int = 50) -> np.ndarray:
    centers = np.quantile(values, (np.arange(k) + 0.5) / k)
    labels = np.zeros(values.size, dtype=np.intp)
    for _ in range(iters):
        edges = (centers[1:] + centers[:-1]) / 2.0
        new = np.searchsorted(edges, values)
        if np.array_equal(new, labels) and _ > 0:
            break
        labels = new
        for j in range(k):
            sel = labels == j
            if sel.any():
                centers[j] = values[sel].mean()
    return labels


def estimate_bias(v: Volume, brain: BinaryMask, n_classes: int = 3, max_iter: int = 10) -> BiasModel:
    """Least-squares fit of a degree-2 log field with one offset per tissue class.

    Tissue classes come from 1D k-means on the current bias-free log
    intensity; classification and field fit alternate until the labels
    stop changing.  Without the per-class offsets the polynomial would
    soak up the radial tissue layering of the brain.
    """
    check_congruent(v, brain)
    check_state(v, "raw")
    if brain.count() < MIN_BIAS_SUPPORT:
        raise ValueError(f"insufficient support: {brain.count()} brain voxels "
                         f"(need {MIN_BIAS_SUPPORT})")
    values = v.voxels[brain.bits].astype(np.float64)
    if values.min() < 0:
        raise ValueError("raw intensities must be non-negative")
    offset = 0.0
    if values.min() == 0:
        offset = 1.0
        log.info("zero intensities inside brain; shifting by +1 before log fit")
    logv = np.log(values + offset)
    coords = [c[brain.bits] for c in normalized_coords(v.dims)]
    poly = design_matrix(*coords)[:, 1:]
    coef = np.zeros(poly.shape[1])
    labels = None
    for _ in range(max_iter):
        new = _kmeans_1d(logv - poly @ coef, n_classes)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        present = np.unique(labels)
        onehot = (labels[:, None] == present[None, :]).astype(np.float64)
        sol, *_ = np.linalg.lstsq(np.hstack([onehot, poly]), logv, rcond=None)
        coef = sol[len(present):]
    return BiasModel((0.0, *(float(c) for c in coef)), offset)


def correct_bias(v: Volume, model: BiasModel, brain: BinaryMask) -> Volume:
    """Divide out the fitted field; the in-brain mean intensity is preserved."""
    check_congruent(v, brain)
    inside = brain.bits
    original = v.voxels[inside].astype(np.float64) + model.offset
    corrected = original / model.field(v.dims)[inside]
    if corrected.size:
        corrected *= original.mean() / corrected.mean()
    out = np.zeros(v.dims, dtype=np.float64)
    out[inside] = corrected - model.offset
    return v.replace(voxels=out, intensity_state="bias_corrected")


def inject_bias(v: Volume, model: BiasModel) -> Volume:
    """Multiply by ``exp(log_field)``; the inverse of an exact correction."""
    return v.replace(voxels=v.voxels * model.field(v.dims))


@dataclass(frozen=True)
class StandardizationMap:
    source: tuple[float, ...]
    target: tuple[float, ...] = TARGET_LANDMARKS

    def __post_init__(self):
        for name in ("source", "target"):
            seq = np.asarray(getattr(self, name), dtype=float)
            if seq.shape != (11,) or np.any(np.diff(seq) <= 0):
                raise ValueError(f"{name} landmarks must be 11 strictly increasing values")

    def __call__(self, values: np.ndarray) -> np.ndarray:
        out = np.interp(values, self.source, self.target)
        return np.clip(out, 0.0, STANDARD_MAX)

    def to_dict(self) -> dict:
        return {"source": list(self.source), "target": list(self.target)}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationMap":
        return cls(tuple(d["source"]), tuple(d["target"]))


def _spread_ties(landmarks: np.ndarray) -> np.ndarray:
    """Separate (near-)tied landmarks around their common value.

    Piecewise-constant histograms put several deciles on one intensity.
    The tied run is spread over an interval much narrower than any real gap,
    so the plateau value maps to the middle of the run's target range.
    """
    tol = 1e-6 * (landmarks[-1] - landmarks[0])
    out = landmarks.copy()
    start = 0
    for i in range(1, len(landmarks) + 1):
        if i < len(landmarks) and landmarks[i] - landmarks[i - 1] <= tol:
            continue
        run = i - start
        if run > 1:
            center = landmarks[start:i].mean()
            out[start:i] = center + tol / run * (np.arange(run) - (run - 1) / 2.0)
        start = i
    return out


def fit_standardization(v: Volume, brain: BinaryMask) -> StandardizationMap:
    check_congruent(v, brain)
    check_state(v, "bias_corrected", "standardized")
    values = v.voxels[brain.bits].astype(np.float64)
    if values.size == 0 or values.min() == values.max():
        raise ValueError("degenerate histogram: constant in-brain intensity")
    deciles = _spread_ties(np.quantile(values, np.linspace(0.0, 1.0, 11)))
    return StandardizationMap(tuple(float(d) for d in deciles))


def apply_standardization(v: Volume, mapping: StandardizationMap, brain: BinaryMask) -> Volume:
    check_congruent(v, brain)
    out = np.zeros(v.dims, dtype=np.float64)
    out[brain.bits] = mapping(v.voxels[brain.bits].astype(np.float64))
    return v.replace(voxels=out, intensity_state="standardized")


def standardize_volume(v: Volume, brain: BinaryMask) -> tuple[Volume, StandardizationMap]:
    """Full preprocessing chain: bias correction then standardization."""
    if v.intensity_state == "raw":
        v = correct_bias(v, estimate_bias(v, brain), brain)
    mapping = fit_standardization(v, brain)
    return apply_standardization(v, mapping, brain), mapping


class BiasFieldCorrector(TransformerMixin, BaseEstimator):
    """Per-scan log-polynomial bias correction.

    Each scan gets its own field, so ``fit`` only validates the input.
    ``models_`` holds the fields estimated by the most recent ``transform``.
    """

    def fit(self, X, y=None):
        as_scans(X)
        self.n_scans_seen_ = len(X)
        return self

    def transform(self, X):
        scans = as_scans(X)
        self.models_ = []
        out = []
        for scan in scans:
            model = estimate_bias(scan.image, scan.brain)
            self.models_.append(model)
            out.append(scan.replace(image=correct_bias(scan.image, model, scan.brain)))
        return out


class IntensityStandardizer(TransformerMixin, BaseEstimator):
    """Maps each scan's in-brain deciles onto a fixed 0..1023 landmark scale.

    Raw scans are bias-corrected first when ``correct_bias`` is true.
    """

    def __init__(self, correct_bias=True):
        self.correct_bias = correct_bias

    def fit(self, X, y=None):
        as_scans(X)
        self.target_landmarks_ = TARGET_LANDMARKS
        return self

    def transform(self, X):
        scans = as_scans(X)
        self.maps_ = []
        out = []
        for scan in scans:
            image = scan.image
            if image.intensity_state == "raw":
                if not self.correct_bias:
                    raise ValueError("raw scan given with correct_bias=False")
                image = correct_bias(image, estimate_bias(image, scan.brain), scan.brain)
            mapping = fit_standardization(image, scan.brain)
            self.maps_.append(mapping)
            out.append(scan.replace(image=apply_standardization(image, mapping, scan.brain)))
        return out
