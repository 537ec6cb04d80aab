"""Kaplan-Meier curves, median survival and the multi-group log-rank test.

Ties: at a shared timestamp every death is counted with all tied subjects
(deaths and censorings) still in the risk set; censored subjects leave
afterwards.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

log = logging.getLogger(__name__)


@dataclass
class KmCurve:
    """Product-limit estimate evaluated at the distinct death times.

    ``survival[i]`` is S(t) for ``times[i] <= t < times[i+1]``; before the
    first death S = 1.
    """

    times: np.ndarray
    survival: np.ndarray
    at_risk: np.ndarray
    deaths: np.ndarray

    def __call__(self, t):
        """Evaluate the right-continuous step function at ``t``."""
        idx = np.searchsorted(self.times, np.asarray(t, float), side="right") - 1
        padded = np.concatenate([[1.0], self.survival])
        return padded[idx + 1]


def _validate(time, event):
    time = np.asarray(time, dtype=np.float64)
    event = np.asarray(event)
    if time.ndim != 1 or time.shape != event.shape:
        raise InputError("time and event must be 1-d arrays of equal length")
    if len(time) == 0:
        raise InputError("no subjects")
    if np.any(time < 0) or not np.all(np.isfinite(time)):
        raise InputError("times must be finite and non-negative")
    if not np.all(np.isin(event, (0, 1))):
        raise InputError("event must be 0 (censored) or 1 (death)")
    return time, event.astype(np.int64)


def km_curve(time, event):
    time, event = _validate(time, event)
    death_times = np.unique(time[event == 1])
    sorted_t = np.sort(time)
    # subjects with time >= t are at risk at t
    at_risk = len(time) - np.searchsorted(sorted_t, death_times, side="left")
    deaths = np.array([np.count_nonzero((time == t) & (event == 1)) for t in death_times],
                      dtype=np.int64)
    survival = np.cumprod((at_risk - deaths) / at_risk)
    return KmCurve(times=death_times, survival=survival, at_risk=at_risk.astype(np.int64),
                   deaths=deaths)


def median_survival(curve):
    """Smallest death time with S <= 0.5, or ``None`` if the curve never gets there."""
    hit = np.nonzero(curve.survival <= 0.5)[0]
    return float(curve.times[hit[0]]) if len(hit) else None


# ------------------------------------------------------------ chi-square tail

def _gamma_series(a, x):
    # P(a, x) by its power series; converges quickly for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            return total * math.exp(-x + a * math.log(x) - math.lgamma(a))
    raise NumericError(f"incomplete gamma series did not converge (a={a}, x={x})")


def _gamma_continued_fraction(a, x):
    # Q(a, x) by Lentz's method; converges quickly for x >= a + 1
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h
    raise NumericError(f"incomplete gamma continued fraction did not converge (a={a}, x={x})")


def gammaincc(a, x):
    """Regularized upper incomplete gamma Q(a, x)."""
    if a <= 0:
        raise InputError("gammaincc needs a > 0")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return max(0.0, 1.0 - _gamma_series(a, x))
    return _gamma_continued_fraction(a, x)


def chi2_sf(x, df):
    """Upper tail probability of a chi-square variable with ``df`` degrees of freedom."""
    return gammaincc(0.5 * df, 0.5 * x)


# ------------------------------------------------------------------- log-rank

@dataclass
class LogRankResult:
    statistic: float
    df: int
    p_value: float
    observed: np.ndarray
    expected: np.ndarray


def logrank_test(time, event, group):
    """Multi-group log-rank test of equal hazards across ``group`` labels."""
    time, event = _validate(time, event)
    group = np.asarray(group)
    if group.shape != time.shape:
        raise InputError("group labels must align with times")
    levels, g = np.unique(group, return_inverse=True)
    n_groups = len(levels)
    if n_groups < 2:
        raise InputError("log-rank test needs at least two non-empty groups")

    death_times = np.unique(time[event == 1])
    # at-risk and death counts per (death time, group)
    at_risk = np.empty((len(death_times), n_groups))
    deaths = np.empty((len(death_times), n_groups))
    for j in range(n_groups):
        tj = np.sort(time[g == j])
        at_risk[:, j] = len(tj) - np.searchsorted(tj, death_times, side="left")
        dj = np.sort(time[(g == j) & (event == 1)])
        deaths[:, j] = (np.searchsorted(dj, death_times, side="right")
                        - np.searchsorted(dj, death_times, side="left"))
    n = at_risk.sum(axis=1)
    d = deaths.sum(axis=1)
    frac = at_risk / n[:, None]
    observed = deaths.sum(axis=0)
    expected = (d[:, None] * frac).sum(axis=0)

    scale = np.where(n > 1, d * (n - d) / np.maximum(n - 1, 1), 0.0)
    var = np.einsum("t,tj,tk->jk", scale, frac, frac)
    var = np.diag((scale[:, None] * frac).sum(axis=0)) - var

    diff = (observed - expected)[:-1]
    v = var[:-1, :-1]
    try:
        if np.linalg.cond(v) > 1e12:
            raise np.linalg.LinAlgError
        stat = float(diff @ np.linalg.solve(v, diff))
    except np.linalg.LinAlgError:
        warnings.warn("singular log-rank covariance; using the pseudo-inverse", RuntimeWarning)
        stat = float(diff @ np.linalg.pinv(v) @ diff)
    stat = max(stat, 0.0)
    df = n_groups - 1
    return LogRankResult(statistic=stat, df=df, p_value=chi2_sf(stat, df),
                         observed=observed, expected=expected)
