"""Evaluation mathematics for attributions against known ground truth."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Sequence

import numpy as np

from .core import AttributionMap, EffectiveRegion
from .errors import ConfigError, DimensionError, UndefinedMetricError


def _scores(attr) -> np.ndarray:
    if isinstance(attr, AttributionMap):
        return attr.scores
    return np.asarray(attr, dtype=np.float64).ravel()


def _indices(f) -> list[int]:
    if isinstance(f, EffectiveRegion):
        return list(f.indices)
    return sorted({int(i) for i in f})


def attr_percent(attr, f) -> float:
    """Share of total absolute attribution that falls inside ``f``."""
    s = np.abs(_scores(attr))
    idx = _indices(f)
    if idx and (idx[0] < 0 or idx[-1] >= s.size):
        raise DimensionError(f"feature index out of range for {s.size} scores")
    total = s.sum()
    if not total > 0:
        raise UndefinedMetricError("attribution map is all zeros; Attr% is undefined")
    return float(min(1.0, s[idx].sum() / total))


def er_percent(er, d: int) -> float:
    if d < 1:
        raise ConfigError("feature count must be >= 1")
    idx = _indices(er)
    if idx and idx[-1] >= d:
        raise DimensionError(f"region index {idx[-1]} out of range for {d} features")
    return len(idx) / d


def precision_recall(f, f_c) -> tuple[float, float]:
    sel, truth = set(_indices(f)), set(_indices(f_c))
    if not sel:
        raise UndefinedMetricError("precision is undefined for an empty selection")
    if not truth:
        raise UndefinedMetricError("recall is undefined for an empty correlating set")
    hits = len(sel & truth)
    return hits / len(sel), hits / len(truth)


def topk_select(attr, k: int) -> EffectiveRegion:
    """Indices of the ``k`` largest |score|; ties go to the lower index."""
    s = np.abs(_scores(attr))
    if not 1 <= k <= s.size:
        raise ConfigError(f"k must lie in 1..{s.size}, got {k}")
    order = np.lexsort((np.arange(s.size), -s))
    return EffectiveRegion.of(order[:k])


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def selection_envelope(budget: int, fc_sizes: Sequence[int], lengths: Sequence[int],
                       level: str = "dataset") -> tuple[float, float]:
    """Best achievable (precision, recall) for a selector spending ``budget`` tokens.

    ``dataset`` lets the budget go anywhere; ``instance`` fixes each review's
    share at round(budget / total_length * length_i).
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    fc = np.asarray(fc_sizes, dtype=np.int64)
    lens = np.asarray(lengths, dtype=np.int64)
    if fc.shape != lens.shape:
        raise DimensionError("fc_sizes and lengths differ in length")
    if np.any(fc > lens) or np.any(fc < 0):
        raise ConfigError("each |F_C| must lie in 0..length")
    total = int(fc.sum())
    if total == 0:
        raise UndefinedMetricError("recall is undefined: no correlating features")
    if level == "dataset":
        return min(1.0, total / budget), min(1.0, budget / total)
    if level != "instance":
        raise ConfigError(f"level must be 'dataset' or 'instance', got {level!r}")
    rate = budget / int(lens.sum())
    ks = np.array([min(int(n), round_half_up(rate * n)) for n in lens], dtype=np.int64)
    if ks.sum() == 0:
        raise UndefinedMetricError("per-review budgets round to zero selections")
    hits = np.minimum(ks, fc).sum()
    return float(hits / ks.sum()), float(hits / total)


# --------------------------------------------------------------------------
# Shapley values over {manipulated, original} features


@dataclass(frozen=True)
class ShapleyInputs:
    p: float
    a_fo: float

    def __post_init__(self):
        if not 0.5 <= self.p <= 1.0:
            raise ConfigError("model accuracy p must lie in [0.5, 1]")
        if not 0.5 <= self.a_fo <= 1.0:
            raise ConfigError("a(F_O) must lie in [0.5, 1]")


def shapley_values(inp: ShapleyInputs) -> tuple[float, float]:
    """(v(F_M), v(F_O)) with a(empty)=0.5 and a(F_M)=a(F_M u F_O)=p."""
    p, a_fo = inp.p, inp.a_fo
    v_m = 0.5 * ((p - 0.5) + (p - a_fo))
    v_o = 0.5 * ((a_fo - 0.5) + (p - p))
    return v_m, v_o


def normalized_shapley(inp: ShapleyInputs) -> tuple[float, float]:
    """Values divided by their sum (p - 0.5); needs 2p - 1 > 0."""
    if not 2 * inp.p - 1 > 0:
        raise UndefinedMetricError("normalisation needs 2p - 1 > 0")
    v_m, v_o = shapley_values(inp)
    total = v_m + v_o
    return v_m / total, v_o / total


def shapley_envelope(p: float, r: float) -> tuple[float, float]:
    """(min normalised v(F_M), max normalised v(F_O)) for a(F_O) <= r."""
    if not p > 0.5:
        raise UndefinedMetricError("envelope needs p > 0.5")
    denom = 2.0 * p - 1.0
    # (2p - 0.5) - r keeps the p = 1 case exact: 1.5 - r
    return ((2.0 * p - 0.5) - r) / denom, (r - 0.5) / denom


# --------------------------------------------------------------------------
# expected accuracy when only a subset of features is distinguishable


@dataclass(frozen=True)
class EnumerableTask:
    """Finite joint distribution over (x, y) plus a total classifier g.

    ``support`` holds (x, y, prob) triples with ``x`` a tuple of feature
    values. Probabilities may be floats or ``fractions.Fraction``; with
    fractions every computation is exact.
    """

    support: tuple[tuple[tuple, Hashable, object], ...]
    g: Callable[[tuple], Hashable]

    def __post_init__(self):
        sup = tuple((tuple(x), y, pr) for x, y, pr in self.support)
        object.__setattr__(self, "support", sup)
        if not sup:
            raise ConfigError("task support is empty")
        if any(pr < 0 for _, _, pr in sup):
            raise ConfigError("probabilities must be non-negative")
        if abs(float(sum(pr for _, _, pr in sup)) - 1.0) > 1e-12:
            raise ConfigError("task probabilities must sum to 1")
        if len(sup) > 2**16:
            raise ConfigError("task support too large to enumerate")

    @property
    def n_features(self) -> int:
        return len(self.support[0][0])


def expected_accuracy_given(f: Iterable[int], task: EnumerableTask):
    """a(F): accuracy when inputs agreeing on F cannot be told apart.

    Within each cell F = f, the prediction on one draw is scored against the
    label of an independent draw from the same cell; cells are weighted by
    P(F = f). Cells with zero mass contribute nothing.
    """
    feats = sorted({int(i) for i in f})
    if feats and (feats[0] < 0 or feats[-1] >= task.n_features):
        raise DimensionError("feature index out of range for task")
    mass = defaultdict(lambda: 0)
    pred = defaultdict(lambda: defaultdict(lambda: 0))
    lab = defaultdict(lambda: defaultdict(lambda: 0))
    for x, y, pr in task.support:
        key = tuple(x[i] for i in feats)
        mass[key] += pr
        pred[key][task.g(x)] += pr
        lab[key][y] += pr
    total = 0
    for key, m in mass.items():
        if m == 0:
            continue
        agree = sum(pc * lab[key].get(c, 0) for c, pc in pred[key].items())
        # P(f) * sum_c P(g=c | f) P(y=c | f)
        total += agree / m
    return total
