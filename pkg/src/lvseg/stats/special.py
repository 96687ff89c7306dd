"""Distribution functions needed by the ANOVA and Tukey tests."""
from __future__ import annotations

import math

import numpy as np
from scipy.special import ndtr

_TINY = 1e-300


def _beta_cf(a: float, b: float, x: float, tol: float, max_iter: int) -> float:
    # modified Lentz evaluation of the incomplete beta continued fraction
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _TINY else _TINY)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _TINY else _TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _TINY else _TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_reg(a: float, b: float, x: float, tol: float = 1e-12, max_iter: int = 10000) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(log_front) * _beta_cf(a, b, x, tol, max_iter) / a
    return 1.0 - math.exp(log_front) * _beta_cf(b, a, 1.0 - x, tol, max_iter) / b


def f_sf(f: float, d1: float, d2: float) -> float:
    """Survival function P(F > f) of the F distribution."""
    if f <= 0:
        return 1.0
    if math.isinf(f):
        return 0.0
    return betainc_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))


def t_sf2(t: float, df: float) -> float:
    """Two-sided p-value of Student's t."""
    t = abs(t)
    if math.isinf(t):
        return 0.0
    return betainc_reg(df / 2.0, 0.5, df / (df + t * t))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


def _gl_nodes(lo: float, hi: float, pieces: int):
    edges = np.linspace(lo, hi, pieces + 1)
    half = (edges[1:] - edges[:-1])[:, None] / 2.0
    mid = (edges[1:] + edges[:-1])[:, None] / 2.0
    return (mid + half * _GL_X).ravel(), (half * _GL_W).ravel()


_Z, _ZW = _gl_nodes(-8.5, 8.5, 12)
_PHI_Z = np.exp(-_Z ** 2 / 2.0) / math.sqrt(2.0 * math.pi)
_CDF_Z = ndtr(_Z)


def range_cdf(w, k: int) -> np.ndarray:
    """CDF of the range of ``k`` iid standard normals, evaluated at ``w``."""
    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    inner = np.clip(_CDF_Z[None, :] - ndtr(_Z[None, :] - w[:, None]), 0.0, 1.0) ** (k - 1)
    out = k * (inner * _PHI_Z[None, :]) @ _ZW
    return np.clip(out, 0.0, 1.0)


def studentized_range_cdf(q: float, k: int, df: float) -> float:
    """P(Q <= q) for the studentized range with ``k`` means and ``df`` degrees of freedom.

    Outer integral over the scaled chi variable ``s = sqrt(chi2_df / df)``,
    inner integral over the normal range; both by composite Gauss-Legendre.
    """
    if k < 2 or df <= 0:
        raise ValueError("need k >= 2 and df > 0")
    if q <= 0:
        return 0.0
    if math.isinf(q):
        return 1.0
    hi = 1.0 + 14.0 / math.sqrt(df) if df > 1 else 16.0
    lo = max(0.0, 1.0 - 14.0 / math.sqrt(df))
    s, sw = _gl_nodes(lo, hi, 24)
    log_dens = (df / 2.0 * math.log(df) - math.lgamma(df / 2.0) - (df / 2.0 - 1.0) * math.log(2.0)
                + (df - 1.0) * np.log(s) - df * s * s / 2.0)
    val = float((np.exp(log_dens) * range_cdf(q * s, k)) @ sw)
    return min(1.0, max(0.0, val))


def studentized_range_sf(q: float, k: int, df: float) -> float:
    return 1.0 - studentized_range_cdf(q, k, df)
