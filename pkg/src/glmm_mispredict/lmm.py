"""Exact linear-mixed-model algebra: predictors, MSEP pieces, KL objective.

Everything in this module is specific to the gaussian family, where the
cluster marginal under a mixture-of-normals random effect is itself a mixture
of normals and all posterior quantities have closed forms. The random-effect
dimension q is general here (the quadrature route is what restricts itself to
a scalar intercept).

Notation per cluster: residual r = y - X beta, component covariance
C_k = (L S_k)(L S_k)^T on the effective scale, precision-sum
A_k = C_k^{-1} + Z^T Z / tau2, component posterior N(m_k, A_k^{-1}), and
component marginal p_k(y) = N(X beta + Z L mu_k, tau2 I + Z C_k Z^T).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import logsumexp

from .model import ClusterData, MixtureSpec, Theta, sample_mixture

_LOG_2PI = math.log(2.0 * math.pi)


def _require_gaussian(theta: Theta) -> None:
    if theta.family != "gaussian":
        msg = f"exact LMM algebra requires the gaussian family, got {theta.family!r}"
        raise ValueError(msg)


def effective_components(theta: Theta):
    """(centers, chols): L-scaled component means (c, q) and factors (c, q, q)."""
    c = theta.n_components
    centers = theta.mixture.means @ theta.L.T
    chols = np.array([theta.L @ theta.mixture.scales[k] for k in range(c)])
    return centers, chols


@dataclass(frozen=True)
class LmmClusterMats:
    """Per-cluster sufficient pieces for the exact-normal computations.

    Attributes:
        z_t_z: (q, q) Z^T Z.
        z_t_resid: (q,) Z^T (y - X beta).
        resid_ss: ||y - X beta||^2.
        n_obs: cluster size.
        tau2: residual variance.
        L: (q, q) overall lower-triangular scale.
    """

    z_t_z: np.ndarray
    z_t_resid: np.ndarray
    resid_ss: float
    n_obs: int
    tau2: float
    L: np.ndarray

    @classmethod
    def from_cluster(cls, cluster: ClusterData, theta: Theta) -> "LmmClusterMats":
        _require_gaussian(theta)
        resid = cluster.y - cluster.X @ theta.beta
        return cls(
            z_t_z=cluster.Z.T @ cluster.Z,
            z_t_resid=cluster.Z.T @ resid,
            resid_ss=float(resid @ resid),
            n_obs=cluster.n,
            tau2=float(theta.tau2),
            L=np.asarray(theta.L, dtype=float),
        )

    @property
    def q(self) -> int:
        return self.z_t_z.shape[0]


def blup_normal(mats: LmmClusterMats) -> np.ndarray:
    """BLUP of u under the plain-normal effect law N(0, L L^T).

    w* = ((L L^T)^{-1} + Z^T Z / tau2)^{-1} Z^T (y - X beta) / tau2.
    """
    prior_prec = cho_solve((mats.L, True), np.eye(mats.q))
    a = prior_prec + mats.z_t_z / mats.tau2
    return cho_solve(cho_factor(a, lower=True), mats.z_t_resid / mats.tau2)


def u1_normal(mats: LmmClusterMats) -> np.ndarray:
    """Posterior variance ((L L^T)^{-1} + Z^T Z / tau2)^{-1}, the leading
    unconditional MSEP term of the BLUP under a correctly specified normal law."""
    prior_prec = cho_solve((mats.L, True), np.eye(mats.q))
    a = prior_prec + mats.z_t_z / mats.tau2
    return cho_solve(cho_factor(a, lower=True), np.eye(mats.q))


@dataclass(frozen=True)
class MixtureBp:
    """Mixture best predictor and its per-component pieces for one cluster."""

    comp_means: np.ndarray      # (c, q) m_k
    comp_vars: np.ndarray       # (c, q, q) A_k^{-1}
    log_marginals: np.ndarray   # (c,) log p_k(y)
    comp_weights: np.ndarray    # (c,) posterior component probabilities
    w: np.ndarray               # (q,) E[u | y]
    v: np.ndarray               # (q, q) Var(u | y)


def bp_mixture_lmm(
    mats: LmmClusterMats,
    spec: MixtureSpec,
    log_marginals: np.ndarray | None = None,
) -> MixtureBp:
    """Best predictor of u under a mixture-of-normals effect law.

    Args:
        mats: cluster matrices built at the parameter point of interest.
        spec: mixture on the unscaled effect (the L in mats supplies scale).
        log_marginals: optional externally computed (c,) log p_k(y); computed
            from the closed normal marginals when omitted.

    Returns:
        MixtureBp; with c = 1 and a standardized spec, w equals blup_normal.
    """
    c = spec.n_components
    q = mats.q
    centers = spec.means @ mats.L.T
    comp_means = np.empty((c, q))
    comp_vars = np.empty((c, q, q))
    logp = np.empty(c)
    eye = np.eye(q)
    for k in range(c):
        chol_ck = mats.L @ spec.scales[k]
        ck_inv = cho_solve((chol_ck, True), eye)
        a_k = ck_inv + mats.z_t_z / mats.tau2
        a_fac = cho_factor(a_k, lower=True)
        comp_vars[k] = cho_solve(a_fac, eye)
        b_k = ck_inv @ centers[k] + mats.z_t_resid / mats.tau2
        comp_means[k] = cho_solve(a_fac, b_k)
        if log_marginals is None:
            # log N(y; X beta + Z center, tau2 I + Z C_k Z^T) via q x q solves.
            zt_rc = mats.z_t_resid - mats.z_t_z @ centers[k]
            rc_ss = (
                mats.resid_ss
                - 2.0 * mats.z_t_resid @ centers[k]
                + centers[k] @ mats.z_t_z @ centers[k]
            )
            quad = rc_ss / mats.tau2 - (
                zt_rc @ cho_solve(a_fac, zt_rc)
            ) / mats.tau2**2
            logdet_ck = 2.0 * np.sum(np.log(np.diag(chol_ck)))
            logdet_ak = 2.0 * np.sum(np.log(np.diag(a_fac[0])))
            logp[k] = -0.5 * (
                mats.n_obs * (_LOG_2PI + math.log(mats.tau2))
                + logdet_ck
                + logdet_ak
                + quad
            )
    if log_marginals is not None:
        logp = np.asarray(log_marginals, dtype=float)
    log_nu = np.log(spec.weights) + logp
    nu = np.exp(log_nu - logsumexp(log_nu))
    w = nu @ comp_means
    v = -np.outer(w, w)
    for k in range(c):
        v += nu[k] * (comp_vars[k] + np.outer(comp_means[k], comp_means[k]))
    return MixtureBp(
        comp_means=comp_means,
        comp_vars=comp_vars,
        log_marginals=logp,
        comp_weights=nu,
        w=w,
        v=v,
    )


def posterior_var_mixture_lmm(mats: LmmClusterMats, spec: MixtureSpec) -> np.ndarray:
    """Var(u | y) under the mixture law: the weighted within-component
    variances plus the between-component spread of the m_k."""
    return bp_mixture_lmm(mats, spec).v


def zeta_weights(mats: LmmClusterMats, spec: MixtureSpec):
    """Matrix weights zeta_k = nu_k A_k^{-1} of the gap decomposition.

    The mixture BP satisfies, draw by draw,
        w = sum_k zeta_k (C_k^{-1} L mu_k + Z^T Z u / tau2 + Z^T eps / tau2),
    which is the expansion used to build the conditional MSEP.

    Returns:
        (zetas, bp): (c, q, q) weights and the MixtureBp they came from.
    """
    bp = bp_mixture_lmm(mats, spec)
    zetas = bp.comp_weights[:, None, None] * bp.comp_vars
    return zetas, bp


def c1_normal(mats: LmmClusterMats, u: np.ndarray) -> np.ndarray:
    """Leading conditional MSEP term of the BLUP given the true effect u.

    With M the normal posterior variance, Gamma1 = M Z^T Z / tau2 - I and
    Gamma2 = M Z^T / tau2, the BLUP gap is Gamma1 u + Gamma2 eps and

        C1(u) = Gamma1 u u^T Gamma1^T + tau2 Gamma2 Gamma2^T.
    """
    u = np.asarray(u, dtype=float).reshape(mats.q)
    m = u1_normal(mats)
    gamma1 = m @ mats.z_t_z / mats.tau2 - np.eye(mats.q)
    noise = m @ (mats.z_t_z / mats.tau2) @ m
    g1u = gamma1 @ u
    return np.outer(g1u, g1u) + noise


@dataclass(frozen=True)
class CmsepGammas:
    """Gap coefficients of the BLUP: gap = gamma1 u + gamma2 eps."""

    gamma1: np.ndarray  # (q, q)
    gamma2: np.ndarray  # (q, n)


def cmsep_gammas(cluster: ClusterData, theta: Theta) -> CmsepGammas:
    """Gamma1 = M Z^T Z / tau2 - I and Gamma2 = M Z^T / tau2 for one cluster."""
    mats = LmmClusterMats.from_cluster(cluster, theta)
    m = u1_normal(mats)
    gamma1 = m @ mats.z_t_z / mats.tau2 - np.eye(mats.q)
    gamma2 = m @ cluster.Z.T / mats.tau2
    return CmsepGammas(gamma1=gamma1, gamma2=gamma2)


def _batch_mixture_posterior(
    z_t_z: np.ndarray,
    z_t_resid: np.ndarray,
    resid_ss: np.ndarray,
    n_obs: int,
    tau2: float,
    L: np.ndarray,
    spec: MixtureSpec,
    want_var: bool,
):
    """Vectorized mixture posterior over a batch of residual statistics.

    Args:
        z_t_z: (q, q), shared design.
        z_t_resid: (r, q) per-draw residual projections.
        resid_ss: (r,) per-draw residual sums of squares.
        n_obs: cluster size.
        tau2, L, spec: parameter pieces.
        want_var: also return the (r, q, q) posterior variances.

    Returns:
        (w, v): (r, q) posterior means and (r, q, q) variances (None unless
        requested).
    """
    r = z_t_resid.shape[0]
    q = z_t_z.shape[0]
    c = spec.n_components
    centers = spec.means @ L.T
    eye = np.eye(q)
    comp_means = np.empty((c, r, q))
    comp_vars = np.empty((c, q, q))
    logp = np.empty((c, r))
    for k in range(c):
        chol_ck = L @ spec.scales[k]
        ck_inv = cho_solve((chol_ck, True), eye)
        a_fac = cho_factor(ck_inv + z_t_z / tau2, lower=True)
        comp_vars[k] = cho_solve(a_fac, eye)
        b = (ck_inv @ centers[k])[None, :] + z_t_resid / tau2
        comp_means[k] = cho_solve(a_fac, b.T).T
        zt_rc = z_t_resid - (z_t_z @ centers[k])[None, :]
        rc_ss = (
            resid_ss
            - 2.0 * z_t_resid @ centers[k]
            + centers[k] @ z_t_z @ centers[k]
        )
        sol = cho_solve(a_fac, zt_rc.T).T
        quad = rc_ss / tau2 - np.sum(zt_rc * sol, axis=1) / tau2**2
        logdet_ck = 2.0 * np.sum(np.log(np.diag(chol_ck)))
        logdet_ak = 2.0 * np.sum(np.log(np.diag(a_fac[0])))
        logp[k] = -0.5 * (
            n_obs * (_LOG_2PI + math.log(tau2)) + logdet_ck + logdet_ak + quad
        )
    log_nu = np.log(spec.weights)[:, None] + logp
    nu = np.exp(log_nu - logsumexp(log_nu, axis=0))
    w = np.einsum("kr,krq->rq", nu, comp_means)
    if not want_var:
        return w, None
    second = np.einsum("kr,kab->rab", nu, comp_vars)
    second += np.einsum("kr,kra,krb->rab", nu, comp_means, comp_means)
    v = second - np.einsum("ra,rb->rab", w, w)
    return w, v


def u1_mixture_mc(
    cluster: ClusterData,
    theta: Theta,
    reps: int,
    rng: np.random.Generator,
):
    """Monte Carlo E[Var(u | y)] for one cluster design under the mixture law.

    Only the Z design matters: the fixed effects cancel from the residuals.

    Returns:
        (u1, mc_se): (q, q) estimate of the leading unconditional MSEP term
        and the elementwise Monte Carlo standard error of the mean.
    """
    _require_gaussian(theta)
    if reps < 2:
        raise ValueError("reps must be >= 2")
    z = cluster.Z
    n, q = z.shape
    u = sample_mixture(theta.mixture, theta.L, reps, rng)
    eps = math.sqrt(theta.tau2) * rng.standard_normal((reps, n))
    resid = u @ z.T + eps
    _, v = _batch_mixture_posterior(
        z.T @ z,
        resid @ z,
        np.sum(resid * resid, axis=1),
        n,
        float(theta.tau2),
        theta.L,
        theta.mixture,
        want_var=True,
    )
    u1 = v.mean(axis=0)
    mc_se = v.std(axis=0, ddof=1) / math.sqrt(reps)
    return u1, mc_se


def c1_mixture_mc(
    cluster: ClusterData,
    theta: Theta,
    u: np.ndarray,
    reps: int,
    rng: np.random.Generator,
):
    """Monte Carlo E[(w - u)(w - u)^T | u] over the residual noise only.

    Returns:
        (c1, mc_se): (q, q) conditional MSEP of the mixture BP at fixed u and
        the elementwise Monte Carlo standard error.
    """
    _require_gaussian(theta)
    if reps < 2:
        raise ValueError("reps must be >= 2")
    z = cluster.Z
    n, q = z.shape
    u = np.asarray(u, dtype=float).reshape(q)
    eps = math.sqrt(theta.tau2) * rng.standard_normal((reps, n))
    resid = (z @ u)[None, :] + eps
    w, _ = _batch_mixture_posterior(
        z.T @ z,
        resid @ z,
        np.sum(resid * resid, axis=1),
        n,
        float(theta.tau2),
        theta.L,
        theta.mixture,
        want_var=False,
    )
    gap = w - u[None, :]
    outer = np.einsum("ra,rb->rab", gap, gap)
    c1 = outer.mean(axis=0)
    mc_se = outer.std(axis=0, ddof=1) / math.sqrt(reps)
    return c1, mc_se


def kl_objective(designs, theta_star: Theta, theta_true: Theta) -> float:
    """Cluster-summed KL-type objective of an assumed normal LMM.

    For each design (X, Z) the true marginal of y is a mixture of normals
    with components N(X beta0 + Z L0 mu_k, tau0^2 I + Z C_k Z^T); the assumed
    model is the plain normal N(X beta*, tau*^2 I + Z L* L*^T Z^T). Up to a
    theta*-free constant the KL divergence from truth to assumption is

        0.5 sum_k pi_k [ tr(S*^{-1} S_k) + d_k^T S*^{-1} d_k + log|S*| ],

    summed over clusters, with d_k the component mean gap. Minimized over
    theta* at the true (beta0, tau0^2, L0 effective scale) when the true
    mixture is standardized.

    Args:
        designs: iterable of ClusterData (responses are ignored).
        theta_star: assumed plain-normal parameters; must have c = 1.
        theta_true: true gaussian parameters, any mixture.

    Returns:
        The objective value (lower is closer).
    """
    _require_gaussian(theta_star)
    _require_gaussian(theta_true)
    if theta_star.n_components != 1:
        raise ValueError("theta_star must be a plain-normal (c = 1) model")
    centers0, chols0 = effective_components(theta_true)
    w0 = theta_true.mixture.weights
    star_chol = theta_star.L @ theta_star.mixture.scales[0]
    star_cov_u = star_chol @ star_chol.T
    total = 0.0
    for cl in designs:
        z = cl.Z
        n = cl.n
        if n == 0:
            continue
        sigma_star = theta_star.tau2 * np.eye(n) + z @ star_cov_u @ z.T
        chol_star = cholesky(sigma_star, lower=True)
        logdet_star = 2.0 * float(np.sum(np.log(np.diag(chol_star))))
        mu_star = cl.X @ theta_star.beta
        mu_base = cl.X @ theta_true.beta
        for k in range(theta_true.n_components):
            ck = chols0[k] @ chols0[k].T
            sigma_k = theta_true.tau2 * np.eye(n) + z @ ck @ z.T
            half = solve_triangular(chol_star, sigma_k, lower=True)
            tr = float(np.sum(solve_triangular(chol_star, half.T, lower=True).diagonal()))
            d = mu_star - (mu_base + z @ centers0[k])
            sol = solve_triangular(chol_star, d, lower=True)
            quad = float(sol @ sol)
            total += 0.5 * w0[k] * (tr + quad + logdet_star)
    return total
