"""Small estimators shared by the oracle and the simulator."""
from __future__ import annotations

import math

import numpy as np
from scipy import stats


def batch_means(x, batches: int = 20, level: float = 0.95) -> tuple[float, float]:
    """Mean of ``x`` and the half-width of a batch-means confidence interval.

    Trailing samples that do not fill a whole batch are dropped from the CI
    computation but kept in the mean.
    """
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return math.nan, math.nan
    mean = float(x.mean())
    size = x.size // batches
    if batches < 2 or size == 0:
        return mean, math.inf
    bm = x[: size * batches].reshape(batches, size).mean(axis=1)
    sd = bm.std(ddof=1)
    half = float(stats.t.ppf(0.5 + level / 2, batches - 1) * sd / math.sqrt(batches))
    return mean, half


def replicate_ci(values, level: float = 0.95) -> tuple[float, float]:
    """Mean and t-interval half-width across independent replicates."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    if v.size == 1:
        return float(v[0]), 0.0
    half = stats.t.ppf(0.5 + level / 2, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size)
    return float(v.mean()), float(half)
