"""Normality diagnostics for predicted effects."""

import numpy as np
import pytest
from scipy import stats

from conftest import make_theta
from glmm_mispredict.diagnostics import (
    density_curve,
    qq_data,
    shapiro_wilk,
)


def test_qq_data_matches_reference_quantiles():
    rng = np.random.default_rng(95)
    x = rng.normal(size=40)
    theo, emp = qq_data(x)
    np.testing.assert_array_equal(emp, np.sort(x))
    want = stats.norm.ppf((np.arange(1, 41) - 0.5) / 40)
    np.testing.assert_allclose(theo, want, atol=1e-12)


def test_qq_data_rejects_degenerate_input():
    with pytest.raises(ValueError):
        qq_data([1.0, 2.0])
    with pytest.raises(ValueError):
        qq_data([1.0, np.nan, 2.0])


def test_qq_line_near_identity_for_standard_normal():
    rng = np.random.default_rng(96)
    theo, emp = qq_data(rng.normal(size=4000))
    slope, intercept = np.polyfit(theo, emp, 1)
    assert slope == pytest.approx(1.0, abs=0.05)
    assert intercept == pytest.approx(0.0, abs=0.05)


def test_shapiro_keeps_normal_flags_skewed():
    rng = np.random.default_rng(97)
    normal = shapiro_wilk(rng.normal(size=300))
    assert normal.n == 300
    assert not normal.rejects_normality()
    skewed = shapiro_wilk(rng.gamma(1.2, size=300))
    assert skewed.rejects_normality()
    assert skewed.p_value < 1e-6
    # statistic agrees with the scipy reference it wraps
    x = rng.normal(size=50)
    ours = shapiro_wilk(x)
    ref = stats.shapiro(x)
    assert ours.statistic == pytest.approx(ref.statistic, abs=1e-12)
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)


def test_shapiro_sample_size_guards():
    with pytest.raises(ValueError):
        shapiro_wilk([1.0, 2.0])
    with pytest.raises(ValueError, match="qq_data"):
        shapiro_wilk(np.random.default_rng(0).normal(size=5001))
    with pytest.raises(ValueError):
        shapiro_wilk(np.full(10, 3.3))


def test_density_curve_integrates_to_one():
    rng = np.random.default_rng(98)
    grid = np.linspace(-12, 12, 4001)
    for c in (1, 2, 3):
        theta = make_theta(rng, "gaussian", c=c)
        dens = density_curve(theta, grid)
        assert dens.shape == grid.shape
        assert np.all(dens >= 0)
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-6)


def test_density_curve_tracks_sampled_effects():
    # histogram of simulated effects should match the analytic curve
    from glmm_mispredict.model import sample_mixture

    rng = np.random.default_rng(99)
    theta = make_theta(rng, "gaussian", c=2)
    draws = sample_mixture(theta.mixture, theta.L, 200_000, rng)[:, 0]
    grid = np.linspace(draws.min(), draws.max(), 241)
    dens = density_curve(theta, 0.5 * (grid[:-1] + grid[1:]))
    hist, _ = np.histogram(draws, bins=grid, density=True)
    assert np.max(np.abs(hist - dens)) < 0.02
