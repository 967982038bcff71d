"""Adaptive Gauss-Hermite machinery for cluster posteriors.

For one cluster with a mixture random-intercept prior, the posterior of u
splits over components: each component contributes a normal prior
N(center_k, scale_k^2) on the effective scale, and the component marginal
p_k(y) together with the within-component posterior mean/variance come from
adaptive quadrature recentred at the component posterior mode (closed
conjugate forms for the gaussian family). Component weights follow as
pi_k p_k(y) / sum_l pi_l p_l(y).

A brute-force trapezoid grid evaluator is included as the slow reference
implementation; it exists so the quadrature route can be checked against an
independent computation, not for production use.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import logsumexp

from . import _kernels
from .model import (
    FAMILY_CODES,
    ClusterData,
    Theta,
    cond_loglik,
    mixture_logpdf,
    mixture_moments,
)

DEFAULT_GH_ORDER = 25


@dataclass(frozen=True)
class GhRule:
    """Gauss-Hermite nodes/weights for weight function exp(-x^2)."""

    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def modified_log_weights(self) -> np.ndarray:
        """log(w_j) + x_j^2, the adaptive-quadrature log weights."""
        return np.log(self.weights) + self.nodes**2


def gh_rule(order: int = DEFAULT_GH_ORDER) -> GhRule:
    """Gauss-Hermite rule of the given order.

    Args:
        order: number of nodes, >= 1. Odd orders place a node at zero and are
            recommended.

    Returns:
        GhRule with nodes ascending and weights summing to sqrt(pi).
    """
    if not isinstance(order, (int, np.integer)) or order < 1:
        raise ValueError(f"quadrature order must be a positive int, got {order!r}")
    nodes, weights = hermgauss(int(order))
    nodes = np.ascontiguousarray(nodes)
    weights = np.ascontiguousarray(weights)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return GhRule(order=int(order), nodes=nodes, weights=weights)


@dataclass(frozen=True)
class ComponentPosterior:
    """Posterior of u within one mixture component, for one cluster."""

    log_marginal: float
    mean: float
    var: float
    used_fallback: bool


def _single_cluster_stats(
    cluster: ClusterData,
    theta: Theta,
    rule: GhRule,
    force_quadrature: bool,
) -> _kernels.ComponentStats:
    if theta.q_r != 1 or cluster.Z.shape[1] != 1:
        raise ValueError("quadrature posteriors support a single random intercept")
    offsets = np.array([0, cluster.n], dtype=np.int64)
    return _kernels.component_stats(
        FAMILY_CODES[theta.family],
        cluster.y,
        cluster.X,
        cluster.Z[:, 0],
        offsets,
        theta.beta,
        theta.tau2,
        theta.effective_centers1d(),
        theta.effective_sds1d(),
        gh_x=rule.nodes,
        gh_lw=rule.modified_log_weights(),
        force_quadrature=force_quadrature,
    )


def component_posterior(
    cluster: ClusterData,
    theta: Theta,
    k: int,
    rule: GhRule | None = None,
    method: str = "auto",
) -> ComponentPosterior:
    """Posterior summaries of u under mixture component k for one cluster.

    Args:
        cluster: the cluster data; may be empty (n = 0), in which case the
            posterior is the component prior and the log marginal is 0.
        theta: model parameters (q_r = 1).
        k: component index in [0, c).
        rule: quadrature rule; defaults to the order-25 rule.
        method: "auto" uses the exact conjugate forms for the gaussian family;
            "quadrature" forces the adaptive-GH route for any family.

    Returns:
        ComponentPosterior with the component log marginal log p_k(y), the
        posterior mean and variance of u given y and the component, and a flag
        marking clusters where the Newton mode search fell back to the
        non-adaptive rule centred at the component prior mean.
    """
    if method not in ("auto", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if not 0 <= k < theta.n_components:
        msg = f"component index {k} out of range for c = {theta.n_components}"
        raise IndexError(msg)
    rule = rule or gh_rule()
    stats = _single_cluster_stats(cluster, theta, rule, method == "quadrature")
    return ComponentPosterior(
        log_marginal=float(stats.log_marginal[0, k]),
        mean=float(stats.post_mean[0, k]),
        var=float(stats.post_var[0, k]),
        used_fallback=bool(stats.used_fallback[0, k]),
    )


def mixture_posterior_from_stats(
    log_weights: np.ndarray,
    stats: _kernels.ComponentStats,
):
    """Combines per-component stats into mixture posterior summaries.

    Args:
        log_weights: (c,) log mixing weights.
        stats: ComponentStats with (m, c) arrays.

    Returns:
        (w, v, comp_weights, log_marginal): arrays of shapes (m,), (m,),
        (m, c), (m,). comp_weights are the posterior component probabilities
        pi_k p_k(y) / sum_l pi_l p_l(y).
    """
    lw = log_weights[None, :] + stats.log_marginal
    log_marginal = logsumexp(lw, axis=1)
    comp_weights = np.exp(lw - log_marginal[:, None])
    w = np.sum(comp_weights * stats.post_mean, axis=1)
    second = np.sum(
        comp_weights * (stats.post_var + stats.post_mean**2), axis=1
    )
    v = second - w**2
    return w, v, comp_weights, log_marginal


def posterior_summary(
    cluster: ClusterData,
    theta: Theta,
    rule: GhRule | None = None,
    method: str = "auto",
):
    """Mixture posterior mean, variance, and component weights for a cluster.

    Returns:
        (w, v, comp_weights): the best predictor E[u | y], its posterior
        variance Var(u | y), and the (c,) posterior component weights.
    """
    if method not in ("auto", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    rule = rule or gh_rule()
    stats = _single_cluster_stats(cluster, theta, rule, method == "quadrature")
    w, v, cw, _ = mixture_posterior_from_stats(np.log(theta.mixture.weights), stats)
    return float(w[0]), float(v[0]), cw[0]


class GridPosterior(NamedTuple):
    """Brute-force posterior summaries from the trapezoid grid."""

    mean: float
    var: float
    log_marginal: float


def grid_posterior_oracle(
    cluster: ClusterData,
    theta: Theta,
    half_width_sds: float = 10.0,
    points: int = 20001,
) -> GridPosterior:
    """Trapezoid-grid evaluation of the cluster posterior of u.

    The grid spans every component center plus/minus half_width_sds of the
    largest relevant sd, so all mixture mass and likelihood support at the
    returned precision is covered. Slow by construction; reference only.

    Args:
        cluster: cluster data (q_r = 1).
        theta: model parameters (q_r = 1).
        half_width_sds: half width in prior sds; must be >= 6 to keep the
            truncation error negligible.
        points: odd number of grid points, >= 1001.

    Returns:
        GridPosterior(mean, var, log_marginal).
    """
    if theta.q_r != 1 or cluster.Z.shape[1] != 1:
        raise ValueError("the grid oracle supports a single random intercept")
    if points < 1001 or points % 2 == 0:
        raise ValueError("points must be an odd integer >= 1001")
    if half_width_sds < 6.0:
        raise ValueError("half_width_sds must be >= 6")

    centers = theta.effective_centers1d()
    sds = theta.effective_sds1d()
    _, cov = mixture_moments(theta.mixture, theta.L)
    overall_sd = float(np.sqrt(cov[0, 0]))
    spread = half_width_sds * max(overall_sd, float(np.max(sds)))
    lo = min(0.0, float(np.min(centers))) - spread
    hi = max(0.0, float(np.max(centers))) + spread
    grid = np.linspace(lo, hi, points)
    dx = grid[1] - grid[0]

    log_prior = mixture_logpdf(grid, theta.mixture, theta.L)
    if cluster.n:
        eta = cluster.X @ theta.beta
        eta_grid = eta[:, None] + cluster.Z[:, 0][:, None] * grid[None, :]
        ll = np.array(
            [
                cond_loglik(theta.family, cluster.y, eta_grid[:, j], theta.tau2)
                for j in range(points)
            ]
        )
    else:
        ll = np.zeros(points)
    logf = log_prior + ll

    # Trapezoid weights: interior 1, endpoints 1/2, all scaled by dx.
    log_tw = np.full(points, np.log(dx))
    log_tw[0] -= np.log(2.0)
    log_tw[-1] -= np.log(2.0)

    log_z = logsumexp(logf + log_tw)
    rel = np.exp(logf + log_tw - log_z)
    mean = float(np.sum(rel * grid))
    var = float(np.sum(rel * (grid - mean) ** 2))
    return GridPosterior(mean=mean, var=var, log_marginal=float(log_z))
