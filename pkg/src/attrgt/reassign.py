"""Label reassignment and the accuracy guarantee that comes with it.

Reassigning labels through a row-stochastic matrix caps what any classifier
can reach from the original features at ``max_ij R_ij``. The binomial tail
bounds how likely a finite test set is to beat that cap by chance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ReassignmentMatrix
from .errors import ConfigError
from .streams import stream

REASSIGN_TAG = "reassign"


@dataclass(frozen=True)
class ReassignConfig:
    matrix: ReassignmentMatrix
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.matrix, ReassignmentMatrix):
            raise ConfigError("ReassignConfig.matrix must be a ReassignmentMatrix")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @classmethod
    def binary(cls, r: float, seed: int = 0) -> "ReassignConfig":
        return cls(ReassignmentMatrix.binary(r), seed)


def reassign_label(label: int, index: int, cfg: ReassignConfig) -> int:
    """New label for the instance at ``index``; depends only on (seed, index, label)."""
    rows = cfg.matrix.rows
    if not 0 <= label < cfg.matrix.k:
        raise ConfigError(f"label {label} outside 0..{cfg.matrix.k - 1}")
    u = stream(cfg.seed, REASSIGN_TAG, index).random()
    cdf = np.cumsum(rows[label])
    return int(min(np.searchsorted(cdf, u, side="right"), cfg.matrix.k - 1))


def reassign_labels(labels: Sequence[int], cfg: ReassignConfig) -> list[int]:
    return [reassign_label(int(y), i, cfg) for i, y in enumerate(labels)]


def max_achievable_accuracy(matrix: ReassignmentMatrix) -> float:
    return float(matrix.rows.max())


# --------------------------------------------------------------------------
# binomial upper tail
#
# Log-pmf terms use Loader's saddle-point form (Stirling remainder plus the
# deviance term bd0), which keeps full relative precision where lgamma
# differences would cancel catastrophically at large n.

_LN_2PI = math.log(2.0 * math.pi)
_S0, _S1, _S2, _S3, _S4 = 1 / 12, 1 / 360, 1 / 1260, 1 / 1680, 1 / 1188
_SMALL_STIRLERR = np.array(
    [0.0] + [math.lgamma(n + 1.0) - (n + 0.5) * math.log(n) + n - 0.5 * _LN_2PI for n in range(1, 16)]
)


def _stirlerr(n: np.ndarray) -> np.ndarray:
    """log(n!) - log(sqrt(2 pi n) (n/e)^n) for integer n >= 1."""
    n = np.asarray(n, dtype=np.float64)
    out = np.empty_like(n)
    small = n <= 15
    out[small] = _SMALL_STIRLERR[n[small].astype(np.int64)]
    big = n[~small]
    nn = big * big
    t = np.where(
        big > 500,
        (_S0 - _S1 / nn) / big,
        np.where(
            big > 80,
            (_S0 - (_S1 - _S2 / nn) / nn) / big,
            np.where(
                big > 35,
                (_S0 - (_S1 - (_S2 - _S3 / nn) / nn) / nn) / big,
                (_S0 - (_S1 - (_S2 - (_S3 - _S4 / nn) / nn) / nn) / nn) / big,
            ),
        ),
    )
    out[~small] = t
    return out


def _bd0(x: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Deviance term x log(x/m) + m - x, evaluated without cancellation."""
    x = np.asarray(x, dtype=np.float64)
    m = np.broadcast_to(np.asarray(m, dtype=np.float64), x.shape)
    out = np.empty_like(x)
    near = np.abs(x - m) < 0.1 * (x + m)
    far = ~near
    with np.errstate(divide="ignore", invalid="ignore"):
        out[far] = x[far] * np.log(x[far] / m[far]) + m[far] - x[far]
    if near.any():
        xs, ms = x[near], m[near]
        v = (xs - ms) / (xs + ms)
        s = (xs - ms) * v
        ej = 2.0 * xs * v
        v2 = v * v
        active = np.ones(xs.shape, dtype=bool)
        for j in range(1, 1000):
            ej = ej * v2
            s1 = s + ej / (2 * j + 1)
            active &= s1 != s
            s = np.where(active, s1, s)
            if not active.any():
                break
        out[near] = s
    return out


def binom_logpmf(k: np.ndarray, n: int, p: float) -> np.ndarray:
    """Natural log of Binom(k; n, p) for integer 0 <= k <= n."""
    k = np.asarray(k, dtype=np.float64)
    q = 1.0 - p
    out = np.full(k.shape, -np.inf)
    if p == 0.0:
        out[k == 0] = 0.0
        return out
    if q == 0.0:
        out[k == n] = 0.0
        return out
    inner = (k > 0) & (k < n)
    ki = k[inner]
    lc = (
        _stirlerr(np.array([n]))[0]
        - _stirlerr(ki)
        - _stirlerr(n - ki)
        - _bd0(ki, n * p)
        - _bd0(n - ki, n * q)
    )
    lf = _LN_2PI + np.log(ki) + np.log1p(-ki / n)
    out[inner] = lc - 0.5 * lf
    # endpoints: q^n and p^n
    lq = -_bd0(np.array([float(n)]), n * q)[0] - n * p if p < 0.1 else n * math.log1p(-p)
    lp = -_bd0(np.array([float(n)]), n * p)[0] - n * q if q < 0.1 else n * math.log(p)
    out[k == 0] = lq
    out[k == n] = lp
    return out


def tail_start(n: int, p: float) -> int:
    """floor(p*n), absorbing float noise when p*n is an integer in exact arithmetic."""
    x = p * n
    k = math.floor(x)
    if math.ceil(x) - x < 1e-9 * max(1.0, x):
        k = math.ceil(x)
    return int(k)


def log_significance_probability(n: int, p_star: float, p: float) -> float:
    """log P[Binom(n, p_star) >= floor(p n)]."""
    if n < 1:
        raise ConfigError("test-set size n must be >= 1")
    if not (0.0 <= p_star <= 1.0 and 0.0 <= p <= 1.0):
        raise ConfigError("p_star and p must lie in [0, 1]")
    k0 = tail_start(n, p)
    if k0 <= 0:
        return 0.0
    logs = binom_logpmf(np.arange(k0, n + 1), n, p_star)
    top = logs.max()
    if top == -np.inf:
        return -math.inf
    # np.sum is pairwise over contiguous float arrays
    return float(top + math.log(np.sum(np.exp(logs - top))))


def significance_probability(n: int, p_star: float, p: float) -> float:
    """Chance that a classifier capped at expected accuracy ``p_star`` scores ``p`` or better on ``n`` items."""
    return min(1.0, math.exp(log_significance_probability(n, p_star, p)))
