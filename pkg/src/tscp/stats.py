"""Shared statistical machinery: KS distances and critical values, Wilson
intervals, least-squares decay fits, within-replica autocorrelation.

KS critical values follow the exact small-sample distribution for n < 35 and
the asymptotic Kolmogorov distribution from n = 35 on; two-sample thresholds
use the classical asymptotic c(alpha)*sqrt((m+n)/(mn)).  With tied (integer)
data the two-sample test is conservative, which only ever makes theorem-level
acceptance harder to fake, not easier.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import stats as sps


def ks_distance_to_standard_normal(z: np.ndarray) -> float:
    """One-sample KS distance of z to N(0,1)."""
    z = np.sort(np.asarray(z, dtype=float))
    n = z.size
    if n == 0:
        raise ValueError("empty sample")
    cdf = sps.norm.cdf(z)
    up = np.arange(1, n + 1) / n - cdf
    dn = cdf - np.arange(0, n) / n
    return float(max(up.max(), dn.max()))


def ks_distance_2samp(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample KS distance (ties handled by pooling)."""
    x = np.sort(np.asarray(x, dtype=float))
    y = np.sort(np.asarray(y, dtype=float))
    pooled = np.concatenate([x, y])
    cdf_x = np.searchsorted(x, pooled, side="right") / x.size
    cdf_y = np.searchsorted(y, pooled, side="right") / y.size
    return float(np.abs(cdf_x - cdf_y).max())


def ks_critical_1samp(n: int, alpha: float) -> float:
    """Critical KS distance at significance alpha for sample size n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n < 35:
        return float(sps.kstwo.isf(alpha, n))
    return float(sps.kstwobign.isf(alpha) / math.sqrt(n))


def ks_critical_2samp(m: int, n: int, alpha: float) -> float:
    c = math.sqrt(-0.5 * math.log(alpha / 2.0))
    return c * math.sqrt((m + n) / (m * n))


def wilson_interval(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    z = sps.norm.isf((1.0 - level) / 2.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def fit_log_linear(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    """Least-squares line through (x, y); returns (slope, intercept, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum((y - pred) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else float("nan")
    return float(slope), float(intercept), r2


def lag1_autocorrelation(groups: list[np.ndarray]) -> tuple[float, int]:
    """Pooled lag-1 autocorrelation of consecutive pairs within each group.

    Under an i.i.d. null the estimate is approximately N(0, 1/n_pairs).
    """
    firsts, seconds = [], []
    for g in groups:
        g = np.asarray(g, dtype=float)
        if g.size >= 2:
            firsts.append(g[:-1])
            seconds.append(g[1:])
    if not firsts:
        return float("nan"), 0
    a = np.concatenate(firsts)
    b = np.concatenate(seconds)
    n = a.size
    if np.std(a) == 0 or np.std(b) == 0:
        return 0.0, n
    rho = float(np.corrcoef(a, b)[0, 1])
    return rho, n
