"""Model primitives for clustered GLMMs with mixture-of-normals random effects.

The observation model is an independent-cluster GLMM with canonical links:
for cluster i with responses y_i, fixed-effect design X_i and random-effect
design Z_i,

    eta_i = X_i beta + Z_i u_i,
    y_ij | u_i  ~  gaussian(eta_ij, tau2) | bernoulli(logit^-1) | poisson(log),

and the random effect u_i follows a finite mixture of normals scaled by a
lower-triangular factor L:

    u_i ~ sum_k pi_k N(L mu_k, (L S_k)(L S_k)^T),

where S_k is the Cholesky factor of the k-th component covariance. A
standardized mixture has sum_k pi_k mu_k = 0 and
sum_k pi_k (S_k S_k^T + mu_k mu_k^T) = I, so that L alone carries the overall
scale; the single-component standardized case is exactly the classical
normal-effects model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

FAMILIES = ("gaussian", "bernoulli", "poisson")

# Integer codes shared with the compiled kernels.
FAMILY_CODES = {"gaussian": 0, "bernoulli": 1, "poisson": 2}

_SIMPLEX_TOL = 1e-8


def validate_family(family: str) -> str:
    if family not in FAMILIES:
        msg = f"unknown family {family!r}; expected one of {FAMILIES}"
        raise ValueError(msg)
    return family


def _as_lower_triangular(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        msg = f"{what} must be a square matrix, got shape {mat.shape}"
        raise ValueError(msg)
    if mat.shape == (1, 1):
        # Scalar case, hit on every optimizer step; skip the index gymnastics.
        if not mat[0, 0] > 0.0:
            msg = f"{what} must have a strictly positive diagonal"
            raise ValueError(msg)
        return mat
    if np.any(mat[np.triu_indices(mat.shape[0], 1)] != 0.0):
        msg = f"{what} must be lower triangular"
        raise ValueError(msg)
    if np.any(np.diag(mat) <= 0.0):
        msg = f"{what} must have a strictly positive diagonal"
        raise ValueError(msg)
    return mat


@dataclass(frozen=True)
class MixtureSpec:
    """Finite mixture of normals on the random-effect scale.

    Attributes:
        weights: (c,) mixing weights on the simplex.
        means: (c, q) component means.
        scales: (c, q, q) lower-triangular Cholesky factors of the component
            covariances.
    """

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a non-empty 1-d array")
        if np.any(w < 0.0) or abs(w.sum() - 1.0) > _SIMPLEX_TOL:
            msg = f"weights must lie on the simplex (sum={w.sum():.3g})"
            raise ValueError(msg)
        w = w / w.sum()
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        if means.shape[0] != w.size:
            # A (c,) vector of univariate means arrives as (1, c); fix it up.
            if means.shape == (1, w.size):
                means = means.T
            else:
                msg = f"means shape {means.shape} does not match {w.size} components"
                raise ValueError(msg)
        scales = np.asarray(self.scales, dtype=float)
        if scales.ndim == 1:
            scales = scales.reshape(-1, 1, 1)
        if scales.shape != (w.size, means.shape[1], means.shape[1]):
            msg = f"scales shape {scales.shape} incompatible with means {means.shape}"
            raise ValueError(msg)
        for k in range(w.size):
            _as_lower_triangular(scales[k], f"scales[{k}]")
        for name, arr in (("weights", w), ("means", means), ("scales", scales)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)

    @classmethod
    def univariate(cls, weights, means, sds) -> "MixtureSpec":
        """Builds a q = 1 spec from component weights, means, and sds."""
        sds = np.asarray(sds, dtype=float)
        return cls(
            weights=np.asarray(weights, dtype=float),
            means=np.asarray(means, dtype=float).reshape(-1, 1),
            scales=sds.reshape(-1, 1, 1),
        )

    @classmethod
    def standard_normal(cls, dim: int = 1) -> "MixtureSpec":
        """The c = 1 standardized spec: a single N(0, I) component."""
        return cls(
            weights=np.ones(1),
            means=np.zeros((1, dim)),
            scales=np.eye(dim)[None, :, :],
        )

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def means1d(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("means1d is only defined for q = 1 specs")
        return self.means[:, 0]

    @property
    def sds1d(self) -> np.ndarray:
        if self.dim != 1:
            raise ValueError("sds1d is only defined for q = 1 specs")
        return self.scales[:, 0, 0]


def mixture_moments(spec: MixtureSpec, L: np.ndarray | None = None):
    """Mean and covariance of the (optionally L-scaled) mixture.

    Args:
        spec: mixture on the unscaled effect.
        L: optional lower-triangular scale; identity when omitted.

    Returns:
        (mean, cov): (q,) vector and (q, q) matrix of the effective law.
    """
    w = spec.weights
    mean = w @ spec.means
    second = np.zeros((spec.dim, spec.dim))
    for k in range(spec.n_components):
        sk = spec.scales[k]
        mk = spec.means[k]
        second += w[k] * (sk @ sk.T + np.outer(mk, mk))
    cov = second - np.outer(mean, mean)
    if L is not None:
        L = np.asarray(L, dtype=float)
        mean = L @ mean
        cov = L @ cov @ L.T
    return mean, cov


def is_standardized(spec: MixtureSpec, tol: float = 1e-8) -> bool:
    """True when the mixture has zero mean and identity second moment."""
    mean, cov = mixture_moments(spec)
    second = cov + np.outer(mean, mean)
    return bool(
        np.max(np.abs(mean)) <= tol
        and np.max(np.abs(second - np.eye(spec.dim))) <= tol
    )


def standardize_mixture(spec: MixtureSpec):
    """Centers and whitens a mixture, factoring the scale into L.

    The input law (with implicit identity scale) is decomposed as
    u = mean + L u_std where u_std follows the returned standardized spec.
    The mean shift is absorbed by centering, so the rebuilt effective law
    matches the input exactly only when the input already has zero mean.

    Returns:
        (std_spec, L): standardized MixtureSpec and the (q, q) lower-triangular
        factor with L L^T equal to the input covariance.
    """
    mean, cov = mixture_moments(spec)
    L = np.linalg.cholesky(cov)
    # Forward substitution keeps the structural zeros of L^-1 S_k exact.
    Linv_means = solve_triangular(L, (spec.means - mean).T, lower=True).T
    Linv_scales = np.array(
        [
            solve_triangular(L, spec.scales[k], lower=True)
            for k in range(spec.n_components)
        ]
    )
    std = MixtureSpec(weights=spec.weights.copy(), means=Linv_means, scales=Linv_scales)
    return std, L


def mixture_logpdf(u, spec: MixtureSpec, L: np.ndarray | None = None):
    """Log density of the effective random-effect law at u.

    Args:
        u: point(s) to evaluate. Scalar or (n,) for q = 1; (q,) or (n, q)
            otherwise.
        spec: mixture spec.
        L: optional lower-triangular scale factor (identity when omitted).

    Returns:
        Scalar or (n,) array of log densities.
    """
    q = spec.dim
    pts = np.asarray(u, dtype=float)
    scalar_in = pts.ndim == 0 or (q > 1 and pts.ndim == 1)
    pts = pts.reshape(-1, q)
    if L is None:
        L = np.eye(q)
    L = np.asarray(L, dtype=float)
    comp = np.empty((pts.shape[0], spec.n_components))
    for k in range(spec.n_components):
        center = L @ spec.means[k]
        chol = L @ spec.scales[k]
        diff = pts - center
        sol = np.linalg.solve(chol, diff.T)
        quad = np.sum(sol * sol, axis=0)
        logdet = np.sum(np.log(np.diag(chol)))
        comp[:, k] = (
            math.log(spec.weights[k])
            - 0.5 * quad
            - logdet
            - 0.5 * q * math.log(2.0 * math.pi)
        )
    out = logsumexp(comp, axis=1)
    return float(out[0]) if scalar_in else out


def sample_mixture(
    spec: MixtureSpec,
    L: np.ndarray | None,
    size: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draws from the effective law; returns (size, q)."""
    q = spec.dim
    if L is None:
        L = np.eye(q)
    L = np.asarray(L, dtype=float)
    comps = rng.choice(spec.n_components, size=size, p=spec.weights)
    z = rng.standard_normal((size, q))
    out = np.empty((size, q))
    for k in range(spec.n_components):
        mask = comps == k
        if not np.any(mask):
            continue
        chol = L @ spec.scales[k]
        out[mask] = (L @ spec.means[k]) + z[mask] @ chol.T
    return out


@dataclass(frozen=True)
class Theta:
    """Full parameter point of the model.

    Attributes:
        family: one of "gaussian", "bernoulli", "poisson".
        beta: (q_f,) fixed-effect coefficients.
        L: (q, q) lower-triangular scale of the random effect.
        mixture: MixtureSpec on the unscaled effect.
        tau2: residual variance; present iff family == "gaussian" (the
            dispersion is fixed at 1 for bernoulli and poisson).
    """

    family: str
    beta: np.ndarray
    L: np.ndarray
    mixture: MixtureSpec
    tau2: float | None = None

    def __post_init__(self) -> None:
        validate_family(self.family)
        beta = np.asarray(self.beta, dtype=float).reshape(-1)
        if beta.size == 0 or not np.all(np.isfinite(beta)):
            raise ValueError("beta must be a non-empty finite vector")
        L = np.asarray(self.L, dtype=float)
        if L.ndim == 0:
            L = L.reshape(1, 1)
        L = _as_lower_triangular(L, "L")
        if L.shape[0] != self.mixture.dim:
            msg = f"L is {L.shape} but the mixture has dim {self.mixture.dim}"
            raise ValueError(msg)
        if self.family == "gaussian":
            if self.tau2 is None or not self.tau2 > 0.0:
                raise ValueError("gaussian family requires tau2 > 0")
        elif self.tau2 is not None:
            msg = f"tau2 is only meaningful for the gaussian family, got {self.tau2}"
            raise ValueError(msg)
        beta.setflags(write=False)
        L.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "L", L)

    @property
    def q_r(self) -> int:
        return self.L.shape[0]

    @property
    def n_components(self) -> int:
        return self.mixture.n_components

    def effective_centers1d(self) -> np.ndarray:
        """(c,) component means of L-scaled mixture, q = 1 only."""
        return float(self.L[0, 0]) * self.mixture.means1d

    def effective_sds1d(self) -> np.ndarray:
        """(c,) component sds of the L-scaled mixture, q = 1 only."""
        return float(self.L[0, 0]) * self.mixture.sds1d


@dataclass(frozen=True)
class ClusterData:
    """One cluster: responses plus fixed- and random-effect designs.

    Attributes:
        cluster_id: identifier, kept as a string.
        y: (n,) responses.
        X: (n, q_f) fixed-effect design.
        Z: (n, q) random-effect design.
    """

    cluster_id: str
    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray

    def __post_init__(self) -> None:
        y = np.asarray(self.y, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        Z = np.asarray(self.Z, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if Z.ndim == 1:
            Z = Z.reshape(-1, 1)
        n = y.size
        if X.shape[0] != n or Z.shape[0] != n:
            msg = (
                f"cluster {self.cluster_id!r}: y has {n} rows, "
                f"X {X.shape[0]}, Z {Z.shape[0]}"
            )
            raise ValueError(msg)
        for name, arr in (("y", y), ("X", X), ("Z", Z)):
            if not np.all(np.isfinite(arr)):
                msg = f"cluster {self.cluster_id!r}: {name} contains non-finite values"
                raise ValueError(msg)
            arr.setflags(write=False)
        object.__setattr__(self, "cluster_id", str(self.cluster_id))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Z", Z)

    @property
    def n(self) -> int:
        return self.y.size


@dataclass
class FlatData:
    """Ragged clusters flattened for the compiled kernels (q = 1 only)."""

    y: np.ndarray        # (N,)
    x: np.ndarray        # (N, q_f) C-contiguous
    z: np.ndarray        # (N,)
    offsets: np.ndarray  # (m + 1,) int64 cluster boundaries
    ids: list


@dataclass
class Dataset:
    """An ordered collection of clusters with consistent designs."""

    clusters: list
    _flat: FlatData | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.clusters:
            raise ValueError("a dataset needs at least one cluster")
        q_f = self.clusters[0].X.shape[1]
        q_r = self.clusters[0].Z.shape[1]
        for cl in self.clusters:
            if cl.X.shape[1] != q_f or cl.Z.shape[1] != q_r:
                msg = (
                    f"cluster {cl.cluster_id!r} has designs "
                    f"({cl.X.shape[1]}, {cl.Z.shape[1]}); expected ({q_f}, {q_r})"
                )
                raise ValueError(msg)
        seen = set()
        for cl in self.clusters:
            if cl.cluster_id in seen:
                raise ValueError(f"duplicate cluster id {cl.cluster_id!r}")
            seen.add(cl.cluster_id)

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)

    @property
    def n_obs(self) -> int:
        return sum(cl.n for cl in self.clusters)

    @property
    def q_f(self) -> int:
        return self.clusters[0].X.shape[1]

    @property
    def q_r(self) -> int:
        return self.clusters[0].Z.shape[1]

    def flat(self) -> FlatData:
        """Flattened arrays for the kernels; cached after the first call."""
        if self._flat is None:
            if self.q_r != 1:
                raise ValueError("flattened kernels support a single random effect")
            ys = [cl.y for cl in self.clusters]
            offsets = np.zeros(len(ys) + 1, dtype=np.int64)
            np.cumsum([y.size for y in ys], out=offsets[1:])
            self._flat = FlatData(
                y=np.concatenate(ys) if self.n_obs else np.zeros(0),
                x=np.ascontiguousarray(np.vstack([cl.X for cl in self.clusters])),
                z=np.concatenate([cl.Z[:, 0] for cl in self.clusters]),
                offsets=offsets,
                ids=[cl.cluster_id for cl in self.clusters],
            )
        return self._flat


def linear_predictor(cluster: ClusterData, beta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """eta = X beta + Z u for one cluster."""
    u = np.asarray(u, dtype=float).reshape(-1)
    return cluster.X @ np.asarray(beta, dtype=float) + cluster.Z @ u


def cond_loglik(family: str, y: np.ndarray, eta: np.ndarray, tau2: float | None = None) -> float:
    """Sum of conditional log-densities log p(y | eta) for one family.

    Uses the stable softplus form for bernoulli and gammaln for the poisson
    normalizer; gaussian requires tau2.
    """
    validate_family(family)
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if y.size == 0:
        return 0.0
    if family == "gaussian":
        if tau2 is None or not tau2 > 0.0:
            raise ValueError("gaussian cond_loglik requires tau2 > 0")
        resid = y - eta
        return float(
            -0.5 * y.size * math.log(2.0 * math.pi * tau2)
            - 0.5 * np.dot(resid, resid) / tau2
        )
    if family == "bernoulli":
        softplus = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
        return float(np.sum(y * eta - softplus))
    # poisson
    return float(np.sum(y * eta - np.exp(eta) - gammaln(y + 1.0)))


def sample_response(
    family: str,
    eta: np.ndarray,
    tau2: float | None,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draws y | eta for one family."""
    validate_family(family)
    eta = np.asarray(eta, dtype=float)
    if family == "gaussian":
        if tau2 is None or not tau2 > 0.0:
            raise ValueError("gaussian sampling requires tau2 > 0")
        return eta + math.sqrt(tau2) * rng.standard_normal(eta.shape)
    if family == "bernoulli":
        p = 1.0 / (1.0 + np.exp(-eta))
        return (rng.random(eta.shape) < p).astype(float)
    return rng.poisson(np.exp(eta)).astype(float)
