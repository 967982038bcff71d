"""Normal-theory prediction intervals and their empirical coverage.

Intervals treat the predictor-minus-truth gap as normal with variance
given by an MSEP estimate, so an interval is just the predictor plus or
minus a normal quantile times the root MSEP.  Coverage is evaluated
marginally and within equal-count bins of the true effects, which is
what separates an unconditional MSEP (good on average, possibly poor in
the tails) from a conditional one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

__all__ = [
    "prediction_interval",
    "BinCoverage",
    "IntervalReport",
    "coverage_eval",
]


def prediction_interval(w, msep, alpha: float = 0.05):
    """Two-sided interval(s) w +/- z_{1-alpha/2} * sqrt(msep).

    ``w`` and ``msep`` broadcast against each other; ``msep`` may be a
    single pooled value or one per predictor.  A zero MSEP collapses the
    interval to the point itself.

    Returns:
        (lo, hi) as floats for scalar input, else arrays.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    w_arr = np.asarray(w, dtype=float)
    msep_arr = np.asarray(msep, dtype=float)
    if np.any(msep_arr < 0.0):
        raise ValueError("msep must be nonnegative")
    half = ndtri(1.0 - alpha / 2.0) * np.sqrt(msep_arr)
    lo, hi = w_arr - half, w_arr + half
    if np.isscalar(w) and np.isscalar(msep):
        return float(lo), float(hi)
    return lo, hi


@dataclass(frozen=True)
class BinCoverage:
    """Coverage within one equal-count bin of the true effects."""

    center: float
    coverage: float
    n: int


@dataclass(frozen=True)
class IntervalReport:
    """Intervals for every target plus marginal and binned coverage."""

    alpha: float
    lo: np.ndarray
    hi: np.ndarray
    covered: np.ndarray
    coverage_marginal: float
    by_bin: tuple[BinCoverage, ...]


def coverage_eval(u_true, w, msep, alpha: float = 0.05, bins: int = 20) -> IntervalReport:
    """Empirical coverage of normal-theory intervals against known truth.

    The targets are sorted by their true value and split into at most
    ``bins`` equal-count groups (fewer when there are ties or too few
    points), so the binned curve reads as coverage conditional on the
    size of the effect.  The marginal rate is the plain fraction
    covered, which equals the count-weighted mean of the bin rates.
    """
    u_arr = np.asarray(u_true, dtype=float).reshape(-1)
    w_arr = np.broadcast_to(np.asarray(w, dtype=float), u_arr.shape)
    msep_arr = np.broadcast_to(np.asarray(msep, dtype=float), u_arr.shape)
    if u_arr.size == 0:
        raise ValueError("need at least one target")
    if bins < 1:
        raise ValueError("bins must be at least 1")
    lo, hi = prediction_interval(w_arr, msep_arr, alpha)
    covered = (lo <= u_arr) & (u_arr <= hi)

    n_bins = min(bins, np.unique(u_arr).size, u_arr.size)
    order = np.argsort(u_arr, kind="stable")
    report_bins = []
    for chunk in np.array_split(order, n_bins):
        report_bins.append(
            BinCoverage(
                center=float(u_arr[chunk].mean()),
                coverage=float(covered[chunk].mean()),
                n=int(chunk.size),
            )
        )
    return IntervalReport(
        alpha=alpha,
        lo=lo,
        hi=hi,
        covered=covered,
        coverage_marginal=float(covered.mean()),
        by_bin=tuple(report_bins),
    )
