"""Maximum likelihood fitting of the mixture-effects GLMM.

The marginal log-likelihood sums, over clusters, the log of the
mixture-weighted component marginals p_k(y_i): exact normal marginals for the
gaussian family, adaptive Gauss-Hermite for bernoulli and poisson. The
optimizer works on an unconstrained vector; the parameter transform enforces
the standardization of the mixture (zero mean, unit second moment) by solving
the last component's mean and sd from the constraints, so the overall scale
lives entirely in L. Optimization is multi-start Nelder-Mead with restarts
followed by a quasi-Newton polish with central-difference gradients.

Only a single random intercept is fit here; that covers every design this
package reproduces.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import _kernels
from .model import (
    FAMILY_CODES,
    Dataset,
    MixtureSpec,
    Theta,
    is_standardized,
    standardize_mixture,
    validate_family,
)
from .quadrature import GhRule, gh_rule

_PENALTY = 1e10
_WEIGHT_FLOOR = 1e-4
_SD_FLOOR = 1e-3
_EXP_CLIP = 600.0


class FitError(RuntimeError):
    """Raised when no optimizer start reaches a finite likelihood."""


@dataclass(frozen=True)
class FitConfig:
    """Recipe for one model fit.

    Attributes:
        family: response family.
        n_components: mixture components in the assumed effect law; 1 is the
            classical normal-effects model.
        gh_order: quadrature order for non-gaussian families.
        n_starts: number of multi-start initial points.
        nm_maxiter: Nelder-Mead iteration cap per run; 200 * dim when None.
        tol_rel_loglik: relative improvement threshold used by the
            convergence probe.
        label: reporting tag; defaults to "c{n_components}".
    """

    family: str
    n_components: int = 1
    gh_order: int = 25
    n_starts: int = 3
    nm_maxiter: int | None = None
    tol_rel_loglik: float = 1e-8
    label: str | None = None

    def __post_init__(self) -> None:
        validate_family(self.family)
        if self.n_components < 1:
            raise ValueError("n_components must be >= 1")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")

    @property
    def tag(self) -> str:
        return self.label if self.label is not None else f"c{self.n_components}"


@dataclass
class FittedModel:
    """A maximized model: parameters plus bookkeeping."""

    theta: Theta
    loglik: float
    converged: bool
    n_params: int
    config: FitConfig
    n_clusters: int
    n_obs: int
    runtime_s: float
    best_start: int


def _exp(x: float) -> float:
    return math.exp(min(float(x), _EXP_CLIP))


class ParamTransform:
    """Bijection between constrained Theta and the optimizer vector.

    Layout: beta (q_f) | log tau2 (gaussian only) | log L | weight logits
    (c - 1) | free means (c - 1) | log(sd - floor) (c - 1). The last
    component's mean and sd are solved from the standardization constraints;
    from_vector returns None when the solved variance falls below the sd
    floor squared (the infeasible corner of the constrained set).
    """

    def __init__(self, family: str, q_f: int, c: int) -> None:
        validate_family(family)
        self.family = family
        self.q_f = int(q_f)
        self.c = int(c)
        self.has_tau = family == "gaussian"
        self.dim = self.q_f + int(self.has_tau) + 1 + 3 * (self.c - 1)

    def to_vector(self, theta: Theta) -> np.ndarray:
        if theta.family != self.family or theta.beta.size != self.q_f:
            raise ValueError("theta does not match this transform")
        if theta.n_components != self.c or theta.q_r != 1:
            raise ValueError("theta does not match this transform")
        if not is_standardized(theta.mixture, tol=1e-6):
            raise ValueError("theta.mixture must be standardized; see standardize_mixture")
        parts = [np.asarray(theta.beta, dtype=float)]
        if self.has_tau:
            parts.append([math.log(theta.tau2)])
        parts.append([math.log(theta.L[0, 0])])
        if self.c > 1:
            w = theta.mixture.weights
            sm = (w - _WEIGHT_FLOOR) / (1.0 - self.c * _WEIGHT_FLOOR)
            if np.any(sm <= 0.0):
                raise ValueError(f"weights below the {_WEIGHT_FLOOR} floor are not representable")
            parts.append(np.log(sm[1:] / sm[0]))
            parts.append(theta.mixture.means1d[:-1])
            sds = theta.mixture.sds1d[:-1]
            if np.any(sds <= _SD_FLOOR):
                raise ValueError(f"component sds below the {_SD_FLOOR} floor are not representable")
            parts.append(np.log(sds - _SD_FLOOR))
        return np.concatenate([np.atleast_1d(np.asarray(p, dtype=float)) for p in parts])

    def from_vector(self, vec: np.ndarray) -> Theta | None:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got {vec.shape}")
        pos = self.q_f
        beta = vec[:pos]
        tau2 = None
        if self.has_tau:
            tau2 = _exp(vec[pos])
            pos += 1
        ell = _exp(vec[pos])
        pos += 1
        c = self.c
        if c == 1:
            spec = MixtureSpec.standard_normal()
        else:
            logits = np.concatenate([[0.0], vec[pos : pos + c - 1]])
            pos += c - 1
            logits = logits - np.max(logits)
            sm = np.exp(logits)
            sm /= sm.sum()
            weights = _WEIGHT_FLOOR + (1.0 - c * _WEIGHT_FLOOR) * sm
            means = np.empty(c)
            means[:-1] = vec[pos : pos + c - 1]
            pos += c - 1
            means[-1] = -float(weights[:-1] @ means[:-1]) / weights[-1]
            sds = np.empty(c)
            sds[:-1] = _SD_FLOOR + np.exp(np.minimum(vec[pos : pos + c - 1], _EXP_CLIP))
            partial = float(weights[:-1] @ (sds[:-1] ** 2 + means[:-1] ** 2))
            last_var = (1.0 - partial - weights[-1] * means[-1] ** 2) / weights[-1]
            if not np.isfinite(last_var) or last_var < _SD_FLOOR**2:
                return None
            sds[-1] = math.sqrt(last_var)
            spec = MixtureSpec.univariate(weights, means, sds)
        return Theta(
            family=self.family,
            beta=beta,
            L=np.array([[ell]]),
            mixture=spec,
            tau2=tau2,
        )


def transform_params(theta: Theta) -> np.ndarray:
    """Unconstrained optimizer vector for a (standardized-mixture) Theta."""
    t = ParamTransform(theta.family, theta.beta.size, theta.n_components)
    return t.to_vector(theta)


def untransform_params(vec: np.ndarray, family: str, q_f: int, c: int) -> Theta | None:
    """Inverse of transform_params; None marks the infeasible corner."""
    return ParamTransform(family, q_f, c).from_vector(vec)


def canonicalize(theta: Theta) -> Theta:
    """Components sorted by ascending mean (ties by sd); q_r = 1 only."""
    if theta.q_r != 1:
        raise ValueError("canonicalize supports q_r = 1 only")
    spec = theta.mixture
    order = np.lexsort((spec.sds1d, spec.means1d))
    if np.array_equal(order, np.arange(spec.n_components)):
        return theta
    new = MixtureSpec.univariate(
        spec.weights[order], spec.means1d[order], spec.sds1d[order]
    )
    return replace(theta, mixture=new)


def marginal_loglik(
    dataset: Dataset,
    theta: Theta,
    rule: GhRule | None = None,
    method: str = "auto",
) -> float:
    """Marginal log-likelihood of the dataset at theta.

    method "auto" uses the exact normal mixture marginal for the gaussian
    family and adaptive quadrature otherwise; "quadrature" forces the
    quadrature route for any family (used to cross-check the exact path).
    """
    if method not in ("auto", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    flat = dataset.flat()
    code = FAMILY_CODES[theta.family]
    need_rule = method == "quadrature" or theta.family != "gaussian"
    if need_rule and rule is None:
        rule = gh_rule()
    stats = _kernels.component_stats(
        code,
        flat.y,
        flat.x,
        flat.z,
        flat.offsets,
        theta.beta,
        theta.tau2,
        theta.effective_centers1d(),
        theta.effective_sds1d(),
        gh_x=None if not need_rule else rule.nodes,
        gh_lw=None if not need_rule else rule.modified_log_weights(),
        force_quadrature=method == "quadrature",
    )
    lw = np.log(theta.mixture.weights)[None, :] + stats.log_marginal
    if lw.shape[1] == 1:
        return float(np.sum(lw))
    # Manual row-wise logsumexp; this sits on the optimizer's hot path.
    m = np.max(lw, axis=1)
    return float(np.sum(m + np.log(np.sum(np.exp(lw - m[:, None]), axis=1))))


def _glm_beta(dataset: Dataset, family: str) -> np.ndarray:
    """Pooled GLM coefficients ignoring the random effects (IRLS)."""
    flat = dataset.flat()
    x, y = flat.x, flat.y
    p = x.shape[1]
    ridge = 1e-8 * np.eye(p)
    if family == "gaussian":
        return np.linalg.solve(x.T @ x + ridge, x.T @ y)
    beta = np.zeros(p)
    if family == "poisson":
        beta[0] = math.log(max(float(np.mean(y)), 0.05))
    for _ in range(30):
        eta = np.clip(x @ beta, -30.0, 30.0)
        if family == "bernoulli":
            mu = 1.0 / (1.0 + np.exp(-eta))
            wts = np.clip(mu * (1.0 - mu), 1e-6, None)
        else:
            mu = np.exp(eta)
            wts = np.clip(mu, 1e-6, None)
        zwork = eta + (y - mu) / wts
        xw = x * wts[:, None]
        new = np.linalg.solve(x.T @ xw + ridge, xw.T @ zwork)
        if not np.all(np.isfinite(new)):
            break
        if np.max(np.abs(new - beta)) < 1e-10:
            beta = new
            break
        beta = new
    return beta


def _crude_effects(dataset: Dataset, family: str, beta: np.ndarray):
    """Rough per-cluster effect estimates and a residual-variance guess."""
    crude = np.zeros(dataset.n_clusters)
    tau2 = 1.0
    if family == "gaussian":
        within = []
        for i, cl in enumerate(dataset.clusters):
            r = cl.y - cl.X @ beta
            z = cl.Z[:, 0]
            ztz = float(z @ z)
            crude[i] = float(z @ r) / ztz if ztz > 0 else 0.0
            within.append(r - z * crude[i])
        resid = np.concatenate(within) if within else np.zeros(1)
        tau2 = max(float(np.var(resid)), 1e-6)
    elif family == "bernoulli":
        for i, cl in enumerate(dataset.clusters):
            p_bar = (float(np.sum(cl.y)) + 0.5) / (cl.n + 1.0)
            crude[i] = math.log(p_bar / (1.0 - p_bar)) - float(np.mean(cl.X @ beta))
    else:
        for i, cl in enumerate(dataset.clusters):
            expected = float(np.sum(np.exp(np.clip(cl.X @ beta, -30.0, 30.0))))
            crude[i] = math.log((float(np.sum(cl.y)) + 0.5) / (expected + 0.5))
    return crude, tau2


def init_params(dataset: Dataset, config: FitConfig, rng: np.random.Generator):
    """Data-driven starting points: GLM betas, moment scales, quantile-split
    mixtures, plus jittered replicas for the extra starts."""
    family = config.family
    beta = _glm_beta(dataset, family)
    crude, tau2 = _crude_effects(dataset, family, beta)
    spread = float(np.std(crude))
    if family == "gaussian":
        harm = float(np.mean([1.0 / max(float(cl.Z[:, 0] @ cl.Z[:, 0]), 1.0) for cl in dataset.clusters]))
        ell = math.sqrt(max(spread**2 - tau2 * harm, 1e-4))
    else:
        ell = max(spread, 0.1)
    c = config.n_components
    starts = []
    for j in range(config.n_starts):
        if c == 1:
            jl = 1.0 if j == 0 else float(np.exp(rng.uniform(-0.4, 0.4)))
            jt = 1.0 if j == 0 else float(np.exp(rng.uniform(-0.4, 0.4)))
            starts.append(
                Theta(
                    family=family,
                    beta=beta,
                    L=np.array([[ell * jl]]),
                    mixture=MixtureSpec.standard_normal(),
                    tau2=tau2 * jt if family == "gaussian" else None,
                )
            )
            continue
        e = (crude - float(np.mean(crude))) / max(spread, 1e-6)
        qs = np.quantile(e, (np.arange(c) + 1.0) / (c + 1.0))
        sds = np.full(c, 0.5)
        if j > 0:
            qs = qs + rng.uniform(-0.7, 0.7, size=c)
            sds = sds * np.exp(rng.uniform(-0.5, 0.5, size=c))
        raw = MixtureSpec.univariate(np.full(c, 1.0 / c), qs, sds)
        std, l_adj = standardize_for_start(raw)
        jl = 1.0 if j == 0 else float(np.exp(rng.uniform(-0.3, 0.3)))
        starts.append(
            Theta(
                family=family,
                beta=beta,
                L=np.array([[ell * float(l_adj) * jl]]),
                mixture=std,
                tau2=tau2 if family == "gaussian" else None,
            )
        )
    return starts


def standardize_for_start(raw: MixtureSpec):
    """standardize_mixture, nudging component sds off the transform floor."""
    std, L = standardize_mixture(raw)
    sds = np.maximum(std.sds1d, _SD_FLOOR * 2.0)
    fixed = MixtureSpec.univariate(std.weights, std.means1d, sds)
    # Re-standardize in case the nudge moved the second moment.
    std2, l2 = standardize_mixture(fixed)
    return std2, float(L[0, 0]) * float(l2[0, 0])


def fit_ml(
    dataset: Dataset,
    config: FitConfig,
    rng: np.random.Generator | None = None,
) -> FittedModel:
    """Maximum-likelihood fit of the model described by config.

    Args:
        dataset: clustered data with a single random-intercept column.
        config: family, component count, quadrature order, start count.
        rng: drives the start jitter; default_rng(0) when omitted, so the
            default fit is deterministic.

    Returns:
        FittedModel with canonicalized (ascending-mean) components.

    Raises:
        FitError: if every start lands on the penalty/non-finite region.
    """
    if dataset.q_r != 1:
        raise ValueError("fitting supports a single random-intercept column")
    rng = rng if rng is not None else np.random.default_rng(0)
    t0 = time.perf_counter()
    transform = ParamTransform(config.family, dataset.q_f, config.n_components)
    rule = gh_rule(config.gh_order)
    dataset.flat()  # build the cache before the hot loop

    def objective(vec: np.ndarray) -> float:
        theta = transform.from_vector(vec)
        if theta is None:
            return _PENALTY
        ll = marginal_loglik(dataset, theta, rule=rule)
        if not np.isfinite(ll):
            return _PENALTY
        return -ll

    maxiter = config.nm_maxiter or 200 * transform.dim
    best_f = np.inf
    best_x = None
    best_start = -1
    for j, theta0 in enumerate(init_params(dataset, config, rng)):
        x0 = transform.to_vector(theta0)
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "xatol": 1e-6, "fatol": 1e-8},
        )
        if res.fun < best_f:
            best_f, best_x, best_start = res.fun, res.x, j
    if best_x is None or best_f >= _PENALTY:
        raise FitError("no start reached a finite likelihood")

    for _ in range(2):
        res = minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            options={"maxiter": maxiter, "xatol": 1e-8, "fatol": 1e-10},
        )
        if res.fun < best_f:
            best_f, best_x = res.fun, res.x

    polish = minimize(objective, best_x, method="BFGS", jac="3-point",
                      options={"maxiter": 200, "gtol": 1e-6})
    if np.isfinite(polish.fun) and polish.fun < best_f:
        best_f, best_x = polish.fun, polish.x

    probe = minimize(
        objective,
        best_x,
        method="Nelder-Mead",
        options={"maxiter": 2 * transform.dim, "xatol": 1e-10, "fatol": 1e-12},
    )
    improvement = best_f - probe.fun
    if probe.fun < best_f:
        best_f, best_x = probe.fun, probe.x
    converged = bool(improvement <= config.tol_rel_loglik * (abs(best_f) + 1.0))

    theta = transform.from_vector(best_x)
    if theta is None or not np.isfinite(best_f) or best_f >= _PENALTY:
        raise FitError("optimizer terminated in the infeasible region")
    return FittedModel(
        theta=canonicalize(theta),
        loglik=-best_f,
        converged=converged,
        n_params=transform.dim,
        config=config,
        n_clusters=dataset.n_clusters,
        n_obs=dataset.n_obs,
        runtime_s=time.perf_counter() - t0,
        best_start=best_start,
    )
