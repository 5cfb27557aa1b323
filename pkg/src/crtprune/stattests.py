"""Decision helpers shared by the verification experiments.

Every check collapses to one of three shapes: an exact value against a
closed form, a Monte Carlo mean inside a sigma band, or a distributional
test returning a p-value.  Helpers here only produce numbers; turning
numbers into verdicts is the harness's job.
"""
from __future__ import annotations

import math
from typing import Tuple

import numpy as np
import scipy.stats

from .errors import DomainError


def chi2_two_sample(x, y, min_expect: int = 10) -> float:
    """P-value for two integer samples sharing one discrete law.

    Cells too thin for the chi-square approximation (fewer than min_expect
    observations across both samples) are dropped rather than pooled, so a
    heavy tail cannot smear a real discrepancy into one catch-all cell.
    """
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if x.size == 0 or y.size == 0:
        raise DomainError("chi-square needs observations on both sides")
    hi = int(max(x.max(), y.max())) + 1
    ox = np.bincount(x, minlength=hi)
    oy = np.bincount(y, minlength=hi)
    keep = (ox + oy) >= min_expect
    res = scipy.stats.chi2_contingency(np.vstack([ox[keep], oy[keep]]))
    return float(res.pvalue)


def ks_uniform(x, lo: float, hi: float) -> float:
    """Kolmogorov-Smirnov p-value against the uniform law on [lo, hi]."""
    if not hi > lo:
        raise DomainError("uniform support must have positive width")
    res = scipy.stats.kstest(np.asarray(x, dtype=float), "uniform",
                             args=(lo, hi - lo))
    return float(res.pvalue)


def ks_two_sample(x, y) -> float:
    res = scipy.stats.ks_2samp(np.asarray(x, dtype=float),
                               np.asarray(y, dtype=float))
    return float(res.pvalue)


def mean_with_se(x) -> Tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise DomainError("a sigma band needs at least two observations")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))
