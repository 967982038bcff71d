"""Normality checks for predicted random effects.

After fitting with a normal random-effect law, the predicted effects
should themselves look roughly normal; systematic skew or multimodality
in their quantile plot is the working signal that the assumed law is
wrong and a mixture is worth fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import shapiro

from .model import Theta, mixture_logpdf

__all__ = ["qq_data", "ShapiroResult", "shapiro_wilk", "density_curve"]


def qq_data(values) -> tuple[np.ndarray, np.ndarray]:
    """Sorted values paired with standard normal plotting quantiles.

    Returns:
        (theoretical, ordered): both (n,), theoretical being
        ndtri((i - 0.5) / n) for i = 1..n.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if x.size < 3:
        raise ValueError("need at least 3 values for a quantile plot")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    n = x.size
    theoretical = ndtri((np.arange(1, n + 1) - 0.5) / n)
    return theoretical, np.sort(x)


@dataclass(frozen=True)
class ShapiroResult:
    statistic: float
    p_value: float
    n: int

    def rejects_normality(self, level: float = 0.05) -> bool:
        return self.p_value < level


def shapiro_wilk(values) -> ShapiroResult:
    """Shapiro-Wilk test of normality for the predicted effects.

    Defined for 3 to 5000 values; outside that, or for a degenerate
    constant sample, raises with a pointer at the quantile plot, whose
    usefulness does not degrade with sample size.
    """
    x = np.asarray(values, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    if not 3 <= x.size <= 5000:
        msg = (
            f"the test is calibrated for 3 to 5000 values, got {x.size}; "
            "inspect qq_data output instead"
        )
        raise ValueError(msg)
    if np.ptp(x) == 0.0:
        raise ValueError("all values are identical; normality is not testable")
    stat, p = shapiro(x)
    return ShapiroResult(statistic=float(stat), p_value=float(p), n=int(x.size))


def density_curve(theta: Theta, grid) -> np.ndarray:
    """Density of the fitted random-effect law evaluated on a grid."""
    g = np.asarray(grid, dtype=float).reshape(-1, 1)
    return np.exp(mixture_logpdf(g, theta.mixture, theta.L))
