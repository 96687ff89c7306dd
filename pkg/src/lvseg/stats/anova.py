"""One-way ANOVA and Tukey-Kramer pairwise comparisons."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .special import f_sf, studentized_range_sf


@dataclass(frozen=True)
class AnovaResult:
    f_stat: float
    df_between: int
    df_within: int
    p_value: float
    means: tuple
    sizes: tuple
    mse: float


@dataclass(frozen=True)
class PairComparison:
    i: int
    j: int
    mean_diff: float
    q_stat: float
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < 0.05


@dataclass(frozen=True)
class TukeyResult:
    pairs: tuple
    labels: tuple = ()

    def get(self, i, j) -> PairComparison:
        """Comparison of groups ``i`` and ``j`` (indices or labels), in either order."""
        if self.labels and not isinstance(i, int):
            i, j = self.labels.index(i), self.labels.index(j)
        a, b = min(i, j), max(i, j)
        for pc in self.pairs:
            if (pc.i, pc.j) == (a, b):
                return pc
        raise KeyError((i, j))

    def p_value(self, i, j) -> float:
        return self.get(i, j).p_value

    def significant(self, i, j, alpha: float = 0.05) -> bool:
        return self.get(i, j).p_value < alpha


def _groups(groups) -> list[np.ndarray]:
    out = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(out) < 2:
        raise ValueError("need at least 2 groups")
    if any(g.size < 2 for g in out):
        raise ValueError("every group needs at least 2 observations")
    return out


def one_way_anova(groups) -> AnovaResult:
    gs = _groups(groups)
    sizes = np.array([g.size for g in gs])
    means = np.array([g.mean() for g in gs])
    grand = np.concatenate(gs).mean()
    ss_between = float((sizes * (means - grand) ** 2).sum())
    ss_within = float(sum(((g - m) ** 2).sum() for g, m in zip(gs, means)))
    df_b = len(gs) - 1
    df_w = int(sizes.sum()) - len(gs)
    mse = ss_within / df_w
    if ss_within == 0:
        f, p = (0.0, 1.0) if ss_between == 0 else (math.inf, 0.0)
    else:
        f = (ss_between / df_b) / mse
        p = f_sf(f, df_b, df_w)
    return AnovaResult(f, df_b, df_w, p, tuple(float(m) for m in means),
                       tuple(int(n) for n in sizes), mse)


def tukey_hsd(groups, labels=()) -> TukeyResult:
    """All pairwise comparisons; ``q = |m_i - m_j| / sqrt(MSE/2 (1/n_i + 1/n_j))``."""
    res = one_way_anova(groups)
    k = len(res.means)
    if labels and len(labels) != k:
        raise ValueError("one label per group required")
    pairs = []
    for i, j in itertools.combinations(range(k), 2):
        diff = res.means[i] - res.means[j]
        se = math.sqrt(res.mse / 2.0 * (1.0 / res.sizes[i] + 1.0 / res.sizes[j]))
        if se == 0:
            q = 0.0 if diff == 0 else math.inf
        else:
            q = abs(diff) / se
        p = 1.0 if q == 0 else studentized_range_sf(q, k, res.df_within)
        pairs.append(PairComparison(i, j, diff, q, p))
    return TukeyResult(tuple(pairs), tuple(labels))
