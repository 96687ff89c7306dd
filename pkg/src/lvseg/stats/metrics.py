"""Overlap and agreement measures between predicted and reference masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..volume import BinaryMask, check_congruent


def dsc(a: BinaryMask, b: BinaryMask) -> float:
    """Dice similarity coefficient; two empty masks agree perfectly (1.0)."""
    check_congruent(a, b)
    na, nb = int(a.bits.sum()), int(b.bits.sum())
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a.bits, b.bits).sum()) / (na + nb)


def cov_of(values) -> float:
    """Sample standard deviation (n - 1) over the mean."""
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2:
        raise ValueError("coefficient of variation needs at least 2 values")
    m = x.mean()
    if m == 0:
        raise ValueError("coefficient of variation undefined for zero mean")
    return float(x.std(ddof=1) / m)


@dataclass(frozen=True)
class PairedVolumes:
    case_id: str
    model: str
    dataset: str
    predicted_ml: float
    truth_ml: float
    dsc: float

    def __post_init__(self):
        if not 0.0 <= self.dsc <= 1.0:
            raise ValueError("dsc must lie in [0, 1]")
        if self.predicted_ml < 0 or self.truth_ml < 0:
            raise ValueError("volumes must be non-negative")


@dataclass(frozen=True)
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    n: int


def linear_regression(x, y) -> RegressionResult:
    """Ordinary least squares ``y ~ slope * x + intercept``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1D and of equal length")
    if x.size < 2:
        raise ValueError("regression needs at least 2 points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx == 0:
        raise ValueError("regression undefined for constant x")
    yc = y - y.mean()
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(yc @ yc)
    resid = y - (slope * x + intercept)
    if ss_tot == 0:
        r2 = 0.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - float(resid @ resid) / ss_tot))
    return RegressionResult(slope, intercept, r2, int(x.size))


@dataclass(frozen=True)
class BlandAltman:
    mean_diff: float
    sd_diff: float
    loa_low: float
    loa_high: float
    means: tuple
    diffs: tuple


def bland_altman(predicted, truth, z: float = 1.96) -> BlandAltman:
    """Bias and limits of agreement of ``predicted - truth``."""
    p = np.asarray(predicted, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("predicted and truth must be 1D and of equal length")
    if p.size < 2:
        raise ValueError("Bland-Altman analysis needs at least 2 pairs")
    d = p - t
    bias = float(d.mean())
    sd = float(d.std(ddof=1))
    return BlandAltman(bias, sd, bias - z * sd, bias + z * sd,
                       tuple(float(v) for v in (p + t) / 2.0), tuple(float(v) for v in d))
