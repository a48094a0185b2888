"""Small statistical summaries used by the experiment suites."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy import stats

from .pointproc import wilson_interval

__all__ = ["wilson_interval", "median_ci", "variance_ci", "mean_ci", "tv_distance",
           "joint_codes", "fraction_ci", "safe_ratio"]


def fraction_ci(flags: Sequence[bool], confidence: float = 0.95) -> tuple[float, float, float]:
    flags = np.asarray(flags, dtype=bool)
    k, n = int(flags.sum()), len(flags)
    lo, hi = wilson_interval(k, n, confidence)
    return k / n, lo, hi


def median_ci(x: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    """Sample median with a distribution-free order-statistic interval."""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    med = float(np.median(x))
    if n < 3:
        return med, float(x[0]), float(x[-1])
    a = (1 - confidence) / 2
    lo = int(stats.binom.ppf(a, n, 0.5))
    hi = int(stats.binom.isf(a, n, 0.5))
    return med, float(x[max(lo - 1, 0)]), float(x[min(hi, n - 1)])


def mean_ci(x: Sequence[float], z: float = 3.0) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    m = float(x.mean())
    se = float(x.std(ddof=1) / math.sqrt(len(x)))
    return m, m - z * se, m + z * se


def variance_ci(x: Sequence[float], z: float = 1.96) -> tuple[float, float, float]:
    """Sample variance with a normal-theory interval from the fourth central moment."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = x - x.mean()
    v = float(c.var(ddof=1))
    m4 = float(np.mean(c ** 4))
    se = math.sqrt(max(m4 - v * v, 0.0) / n)
    return v, v - z * se, v + z * se


def joint_codes(columns: Sequence[np.ndarray]) -> np.ndarray:
    """Map rows of integer columns to single hashable keys (structured array)."""
    return np.rec.fromarrays([np.asarray(c, dtype=np.int64) for c in columns])


def tv_distance(a, b) -> float:
    """Total variation distance between the empirical laws of two samples."""
    a = np.asarray(a)
    b = np.asarray(b)
    keys, inv = np.unique(np.concatenate([a, b]), return_inverse=True)
    inv = inv.reshape(-1)
    pa = np.bincount(inv[:len(a)], minlength=len(keys)) / len(a)
    pb = np.bincount(inv[len(a):], minlength=len(keys)) / len(b)
    return 0.5 * float(np.abs(pa - pb).sum())


def safe_ratio(num: float, den: float) -> float:
    if den == 0:
        return math.inf if num > 0 else math.nan
    return num / den
