"""Core model types: mixtures, moments, likelihood terms, data containers."""

import numpy as np
import pytest
from scipy import stats

from glmm_mispredict.model import (
    ClusterData,
    Dataset,
    MixtureSpec,
    Theta,
    cond_loglik,
    is_standardized,
    linear_predictor,
    mixture_logpdf,
    mixture_moments,
    sample_mixture,
    sample_response,
    standardize_mixture,
)
from glmm_mispredict.simlab import DIST_I, DIST_II


def test_benchmark_mixture_moments_frozen():
    # The catalog laws were chosen for mean ~0 and variance 1 and 4; the
    # rounded parameters land a hair off, and these are the exact values.
    mean_1, cov_1 = mixture_moments(DIST_I)
    assert mean_1[0] == pytest.approx(0.004, abs=1e-12)
    assert cov_1[0, 0] == pytest.approx(0.998104, abs=1e-9)

    mean_2, cov_2 = mixture_moments(DIST_II)
    assert mean_2[0] == pytest.approx(0.0, abs=1e-12)
    assert cov_2[0, 0] == pytest.approx(4.00315, abs=1e-9)


def test_mixture_moments_vs_sampling():
    rng = np.random.default_rng(7)
    spec = MixtureSpec.univariate((0.3, 0.7), (-1.0, 0.5), (0.8, 1.3))
    mean, cov = mixture_moments(spec)
    draws = sample_mixture(spec, None, 400_000, rng)[:, 0]
    assert draws.mean() == pytest.approx(mean[0], abs=0.01)
    assert draws.var() == pytest.approx(cov[0, 0], abs=0.03)


def test_standardize_mixture_distII_multiplier():
    # Standardizing the variance-4 law factors out the frozen multiplier.
    spec, L = standardize_mixture(DIST_II)
    assert L[0, 0] == pytest.approx(2.00078735, abs=1e-7)
    assert is_standardized(spec)
    mean, cov = mixture_moments(spec)
    np.testing.assert_allclose(mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(cov, np.eye(1), atol=1e-12)


def test_standardize_mixture_recenters():
    spec, L = standardize_mixture(DIST_I)
    mean, cov = mixture_moments(spec)
    np.testing.assert_allclose(mean, 0.0, atol=1e-12)
    np.testing.assert_allclose(cov, np.eye(1), atol=1e-12)
    # Standardizing recenters, so the effective law is the original
    # shifted by its (slightly nonzero) mean.
    orig_mean, _ = mixture_moments(DIST_I)
    pts = np.linspace(-3.0, 4.0, 9).reshape(-1, 1)
    np.testing.assert_allclose(
        mixture_logpdf(pts + orig_mean[0], DIST_I),
        mixture_logpdf(pts, spec, L),
        atol=1e-12,
    )
    # A law that is already centered standardizes without distortion.
    spec2, L2 = standardize_mixture(DIST_II)
    np.testing.assert_allclose(
        mixture_logpdf(pts, DIST_II),
        mixture_logpdf(pts, spec2, L2),
        atol=1e-12,
    )


def test_standard_normal_spec_is_standardized():
    spec = MixtureSpec.standard_normal()
    assert spec.n_components == 1
    assert is_standardized(spec)


def test_mixture_logpdf_matches_norm_oracle():
    # Manual two-component density via scipy.stats.norm.
    spec = MixtureSpec.univariate((0.25, 0.75), (-0.5, 1.0), (0.7, 1.4))
    x = np.linspace(-4, 5, 23)
    want = np.log(
        0.25 * stats.norm.pdf(x, -0.5, 0.7) + 0.75 * stats.norm.pdf(x, 1.0, 1.4)
    )
    got = mixture_logpdf(x.reshape(-1, 1), spec)
    np.testing.assert_allclose(got, want, atol=1e-10)


def test_mixture_weights_validation():
    with pytest.raises(ValueError):
        MixtureSpec.univariate((0.5, 0.6), (0.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        MixtureSpec.univariate((1.2, -0.2), (0.0, 1.0), (1.0, 1.0))
    with pytest.raises(ValueError):
        MixtureSpec.univariate((0.5, 0.5), (0.0, 1.0), (1.0, -1.0))


def test_theta_validation():
    spec = MixtureSpec.standard_normal()
    with pytest.raises(ValueError):
        Theta(family="gaussian", beta=[0.0], L=[[1.0]], mixture=spec)  # no tau2
    with pytest.raises(ValueError):
        Theta(family="poisson", beta=[0.0], L=[[1.0]], mixture=spec, tau2=1.0)
    with pytest.raises(ValueError):
        Theta(family="gaussian", beta=[0.0], L=[[0.5, 0.1], [0.0, 0.5]],
              mixture=spec, tau2=1.0)  # upper-triangular junk
    with pytest.raises(ValueError):
        Theta(family="huber", beta=[0.0], L=[[1.0]], mixture=spec)


def test_cond_loglik_matches_scipy():
    rng = np.random.default_rng(3)
    eta = rng.normal(size=12)
    y_g = rng.normal(size=12)
    want = stats.norm.logpdf(y_g, loc=eta, scale=np.sqrt(0.7)).sum()
    assert cond_loglik("gaussian", y_g, eta, tau2=0.7) == pytest.approx(want, abs=1e-10)

    y_b = (rng.random(12) < 0.5).astype(float)
    p = 1 / (1 + np.exp(-eta))
    want = stats.bernoulli.logpmf(y_b.astype(int), p).sum()
    assert cond_loglik("bernoulli", y_b, eta) == pytest.approx(want, abs=1e-10)

    y_p = rng.poisson(3.0, size=12).astype(float)
    want = stats.poisson.logpmf(y_p.astype(int), np.exp(eta)).sum()
    assert cond_loglik("poisson", y_p, eta) == pytest.approx(want, abs=1e-10)


def test_cond_loglik_extreme_eta_is_finite():
    # The bernoulli branch must not overflow at huge linear predictors.
    y = np.array([1.0, 0.0])
    eta = np.array([800.0, -800.0])
    assert np.isfinite(cond_loglik("bernoulli", y, eta))
    assert cond_loglik("bernoulli", y, eta) == pytest.approx(0.0, abs=1e-10)


def test_sample_response_family_shapes():
    rng = np.random.default_rng(11)
    eta = np.array([-0.5, 0.0, 2.0])
    y_b = sample_response("bernoulli", eta, None, rng)
    assert set(np.unique(y_b)) <= {0.0, 1.0}
    y_p = sample_response("poisson", eta, None, rng)
    assert np.all(y_p >= 0) and np.all(y_p == np.round(y_p))
    y_g = sample_response("gaussian", eta, 1.0, rng)
    assert y_g.shape == eta.shape


def test_cluster_and_dataset_validation():
    y = np.zeros(3)
    X = np.ones((3, 2))
    Z = np.ones((3, 1))
    with pytest.raises(ValueError):
        ClusterData(cluster_id="a", y=np.zeros(2), X=X, Z=Z)  # ragged
    with pytest.raises(ValueError):
        ClusterData(cluster_id="a", y=np.array([0.0, np.inf, 0.0]), X=X, Z=Z)
    c1 = ClusterData(cluster_id="a", y=y, X=X, Z=Z)
    c2 = ClusterData(cluster_id="a", y=y, X=X, Z=Z)
    with pytest.raises(ValueError):
        Dataset(clusters=(c1, c2))  # duplicate ids
    with pytest.raises(ValueError):
        Dataset(clusters=())


def test_dataset_flat_layout():
    rng = np.random.default_rng(2)
    clusters = []
    sizes = [3, 1, 4]
    for i, n in enumerate(sizes):
        clusters.append(
            ClusterData(
                cluster_id=f"c{i}",
                y=rng.normal(size=n),
                X=rng.normal(size=(n, 2)),
                Z=np.ones((n, 1)),
            )
        )
    ds = Dataset(clusters=tuple(clusters))
    flat = ds.flat()
    np.testing.assert_array_equal(flat.offsets, [0, 3, 4, 8])
    np.testing.assert_allclose(flat.y[3], clusters[1].y[0])
    assert flat.x.flags["C_CONTIGUOUS"]
    assert ds.flat() is flat  # cached


def test_linear_predictor():
    cl = ClusterData(
        cluster_id="1",
        y=np.zeros(2),
        X=np.array([[1.0, 2.0], [1.0, -1.0]]),
        Z=np.ones((2, 1)),
    )
    eta = linear_predictor(cl, np.array([0.5, 1.0]), np.array([0.25]))
    np.testing.assert_allclose(eta, [2.75, -0.25])
