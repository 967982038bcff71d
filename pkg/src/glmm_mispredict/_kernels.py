"""Hot per-cluster kernels with a numba path and a pure-numpy path.

Everything the likelihood optimizer evaluates thousands of times lives here:
for each (cluster, mixture component) pair the kernels return the component
log-marginal, the posterior mean, and the posterior variance of the random
intercept. The gaussian family has closed conjugate forms; bernoulli and
poisson use adaptive Gauss-Hermite quadrature recentred at the posterior mode
found by a safeguarded Newton search.

Two implementations share each contract:

* loop kernels, compiled with ``numba.njit(cache=True, nogil=True)``;
* vectorized numpy twins, used when numba is unavailable or when the
  environment variable ``GLMM_MISPREDICT_NO_NUMBA`` is set to 1/true/yes.

``USE_NUMBA`` reports which path is live; ``benchmarks/bench_kernels.py``
times both. The two paths agree to floating-point roundoff (they sum in
different orders, so not bitwise); the test suite pins them together at 1e-10.

All kernels take flat ragged arrays (see model.Dataset.flat) and support only
a single random intercept, which is the only case the quadrature route needs.
"""

from __future__ import annotations

import math
import os
from typing import NamedTuple

import numpy as np

SQRT2 = math.sqrt(2.0)
_LOG_2PI = math.log(2.0 * math.pi)
_NEWTON_TOL = 1e-10
_NEWTON_MAX_ITER = 100
_ETA_CAP = 700.0  # exp() guard for the poisson mean during Newton overshoot

# Family codes, kept in sync with model.FAMILY_CODES.
GAUSSIAN, BERNOULLI, POISSON = 0, 1, 2


def _env_disabled() -> bool:
    return os.environ.get("GLMM_MISPREDICT_NO_NUMBA", "").strip().lower() in {
        "1",
        "true",
        "yes",
    }


# ---------------------------------------------------------------------------
# loop kernels (numba-compatible: scalars, explicit loops, math.* only)
# ---------------------------------------------------------------------------


def _h_value_core(fam, y, base, z, lo, hi, tau2, u, a, s2):
    """log p(y_i | u) + log N(u; a, s2) at scalar u for one cluster."""
    h = -0.5 * (u - a) * (u - a) / s2 - 0.5 * math.log(2.0 * math.pi * s2)
    for j in range(lo, hi):
        eta = base[j - lo] + z[j] * u
        if fam == GAUSSIAN:
            r = y[j] - eta
            h += -0.5 * _LOG_2PI - 0.5 * math.log(tau2) - 0.5 * r * r / tau2
        elif fam == BERNOULLI:
            if eta > 0.0:
                sp = eta + math.log1p(math.exp(-eta))
            else:
                sp = math.log1p(math.exp(eta))
            h += y[j] * eta - sp
        else:
            if eta > _ETA_CAP:
                return -math.inf
            h += y[j] * eta - math.exp(eta) - math.lgamma(y[j] + 1.0)
    return h


def _h_derivs_core(fam, y, base, z, lo, hi, tau2, u, a, s2):
    """(d/du, d2/du2) of _h_value_core at scalar u."""
    g = -(u - a) / s2
    hess = -1.0 / s2
    for j in range(lo, hi):
        zj = z[j]
        eta = base[j - lo] + zj * u
        if fam == GAUSSIAN:
            g += zj * (y[j] - eta) / tau2
            hess += -zj * zj / tau2
        elif fam == BERNOULLI:
            if eta > 0.0:
                p = 1.0 / (1.0 + math.exp(-eta))
            else:
                e = math.exp(eta)
                p = e / (1.0 + e)
            g += zj * (y[j] - p)
            hess += -zj * zj * p * (1.0 - p)
        else:
            lam = math.exp(min(eta, _ETA_CAP))
            g += zj * (y[j] - lam)
            hess += -zj * zj * lam
    return g, hess


def _gaussian_stats_core(y, x, z, offsets, beta, tau2, centers, scales):
    """Closed-form component stats for the gaussian family.

    Returns (log_marginal, post_mean, post_var), each (m, c).
    """
    m = offsets.shape[0] - 1
    c = centers.shape[0]
    logp = np.empty((m, c))
    mean = np.empty((m, c))
    var = np.empty((m, c))
    for i in range(m):
        lo = offsets[i]
        hi = offsets[i + 1]
        n = hi - lo
        ztz = 0.0
        ztr = 0.0
        rss = 0.0
        for j in range(lo, hi):
            r = y[j]
            for p in range(beta.shape[0]):
                r -= x[j, p] * beta[p]
            zj = z[j]
            ztz += zj * zj
            ztr += zj * r
            rss += r * r
        for k in range(c):
            a = centers[k]
            s2 = scales[k] * scales[k]
            denom = 1.0 + s2 * ztz / tau2
            rtr = rss - 2.0 * a * ztr + a * a * ztz
            ztr_c = ztr - a * ztz
            quad = rtr / tau2 - (s2 / (tau2 * tau2)) * ztr_c * ztr_c / denom
            logp[i, k] = (
                -0.5 * n * (_LOG_2PI + math.log(tau2))
                - 0.5 * math.log(denom)
                - 0.5 * quad
            )
            v = 1.0 / (1.0 / s2 + ztz / tau2)
            var[i, k] = v
            mean[i, k] = v * (a / s2 + ztr / tau2)
    return logp, mean, var


def _glmm_stats_core(fam, y, x, z, offsets, beta, tau2, centers, scales, gh_x, gh_lw):
    """Adaptive-GH component stats for any family.

    gh_x are the raw Hermite nodes and gh_lw = log(w_j) + x_j**2 the modified
    log weights. Returns (log_marginal, post_mean, post_var, used_fallback),
    the first three (m, c) floats, the last (m, c) uint8 flags set when the
    Newton mode search hit its iteration cap; the rule is then centred at the
    last ascent iterate, which the line search keeps monotone, so the flag is
    advisory rather than a switch to a different integration path.
    """
    m = offsets.shape[0] - 1
    c = centers.shape[0]
    nq = gh_x.shape[0]
    logp = np.empty((m, c))
    mean = np.empty((m, c))
    var = np.empty((m, c))
    fellback = np.zeros((m, c), dtype=np.uint8)
    hv = np.empty(nq)
    for i in range(m):
        lo = offsets[i]
        hi = offsets[i + 1]
        n = hi - lo
        base = np.empty(n)
        for j in range(n):
            acc = 0.0
            for p in range(beta.shape[0]):
                acc += x[lo + j, p] * beta[p]
            base[j] = acc
        for k in range(c):
            a = centers[k]
            s = scales[k]
            s2 = s * s
            u = a
            converged = False
            for _ in range(_NEWTON_MAX_ITER):
                g, hess = _h_derivs(fam, y, base, z, lo, hi, tau2, u, a, s2)
                if abs(g) < _NEWTON_TOL:
                    converged = True
                    break
                step = -g / hess
                if abs(step) <= 1e-12 * (1.0 + abs(u)):
                    # The gradient's floating-point floor scales with the
                    # response magnitude; the Newton step does not, so a
                    # machine-noise step means we are at the optimum.
                    converged = True
                    break
                h0 = _h_value(fam, y, base, z, lo, hi, tau2, u, a, s2)
                t = 1.0
                u_new = u + step
                for _ in range(60):
                    u_new = u + t * step
                    h1 = _h_value(fam, y, base, z, lo, hi, tau2, u_new, a, s2)
                    if h1 >= h0 - 1e-12:
                        break
                    t *= 0.5
                if u_new == u:
                    # Step underflowed; the gradient is as small as it gets.
                    converged = abs(g) < 1e-6
                    break
                u = u_new
            # h is strictly concave for every family (hess <= -1/s2), so the
            # local curvature is usable wherever the iteration stopped, and
            # the line search kept u on a monotone ascent path.
            g, hess = _h_derivs(fam, y, base, z, lo, hi, tau2, u, a, s2)
            sig = 1.0 / math.sqrt(-hess)
            if not converged:
                fellback[i, k] = 1
            for j in range(nq):
                t_j = u + SQRT2 * sig * gh_x[j]
                hv[j] = gh_lw[j] + _h_value(fam, y, base, z, lo, hi, tau2, t_j, a, s2)
            hmax = hv[0]
            for j in range(1, nq):
                if hv[j] > hmax:
                    hmax = hv[j]
            s0 = 0.0
            s1 = 0.0
            s2m = 0.0
            for j in range(nq):
                e = math.exp(hv[j] - hmax)
                d = SQRT2 * sig * gh_x[j]
                s0 += e
                s1 += e * d
                s2m += e * d * d
            d_mean = s1 / s0
            logp[i, k] = math.log(SQRT2 * sig) + hmax + math.log(s0)
            mean[i, k] = u + d_mean
            var[i, k] = s2m / s0 - d_mean * d_mean
    return logp, mean, var, fellback


# ---------------------------------------------------------------------------
# numpy twins
# ---------------------------------------------------------------------------


def _segment_sums(values: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Per-cluster sums of a flat array; robust to empty clusters."""
    csum = np.zeros(values.size + 1)
    np.cumsum(values, out=csum[1:])
    return csum[offsets[1:]] - csum[offsets[:-1]]


def _gaussian_stats_numpy(y, x, z, offsets, beta, tau2, centers, scales):
    resid = y - x @ beta
    n = (offsets[1:] - offsets[:-1]).astype(float)
    ztz = _segment_sums(z * z, offsets)[:, None]
    ztr = _segment_sums(z * resid, offsets)[:, None]
    rss = _segment_sums(resid * resid, offsets)[:, None]
    a = centers[None, :]
    s2 = (scales * scales)[None, :]
    denom = 1.0 + s2 * ztz / tau2
    rtr = rss - 2.0 * a * ztr + a * a * ztz
    ztr_c = ztr - a * ztz
    quad = rtr / tau2 - (s2 / tau2**2) * ztr_c**2 / denom
    logp = -0.5 * n[:, None] * (_LOG_2PI + np.log(tau2)) - 0.5 * np.log(denom) - 0.5 * quad
    var = np.broadcast_to(1.0 / (1.0 / s2 + ztz / tau2), logp.shape).copy()
    mean = var * (a / s2 + ztr / tau2)
    return logp, mean, var


def _loglik_terms_numpy(fam, y, eta, tau2):
    """Per-observation log p(y | eta); eta may broadcast to extra axes."""
    if fam == GAUSSIAN:
        r = y - eta
        return -0.5 * (_LOG_2PI + math.log(tau2)) - 0.5 * r * r / tau2
    if fam == BERNOULLI:
        sp = np.maximum(eta, 0.0) + np.log1p(np.exp(-np.abs(eta)))
        return y * eta - sp
    from scipy.special import gammaln

    lam = np.exp(np.minimum(eta, _ETA_CAP))
    out = y * eta - lam - gammaln(y + 1.0)
    return np.where(eta > _ETA_CAP, -np.inf, out)


def _glmm_stats_numpy(fam, y, x, z, offsets, beta, tau2, centers, scales, gh_x, gh_lw):
    m = offsets.shape[0] - 1
    c = centers.shape[0]
    base_all = x @ beta
    logp = np.empty((m, c))
    mean = np.empty((m, c))
    var = np.empty((m, c))
    fellback = np.zeros((m, c), dtype=np.uint8)

    for i in range(m):
        lo, hi = offsets[i], offsets[i + 1]
        ys = y[lo:hi]
        zs = z[lo:hi]
        base = base_all[lo:hi]

        def h_val(u, a, s2):
            prior = -0.5 * (u - a) ** 2 / s2 - 0.5 * math.log(2.0 * math.pi * s2)
            if ys.size == 0:
                return prior
            ll = _loglik_terms_numpy(fam, ys, base + zs * u, tau2)
            return prior + float(np.sum(ll))

        def h_derivs(u, a, s2):
            g = -(u - a) / s2
            hess = -1.0 / s2
            if ys.size:
                eta = base + zs * u
                if fam == GAUSSIAN:
                    g += float(np.sum(zs * (ys - eta)) / tau2)
                    hess += float(-np.sum(zs * zs) / tau2)
                elif fam == BERNOULLI:
                    p = 1.0 / (1.0 + np.exp(-eta))
                    g += float(np.sum(zs * (ys - p)))
                    hess += float(-np.sum(zs * zs * p * (1.0 - p)))
                else:
                    lam = np.exp(np.minimum(eta, _ETA_CAP))
                    g += float(np.sum(zs * (ys - lam)))
                    hess += float(-np.sum(zs * zs * lam))
            return g, hess

        for k in range(c):
            a = float(centers[k])
            s = float(scales[k])
            s2 = s * s
            u = a
            converged = False
            for _ in range(_NEWTON_MAX_ITER):
                g, hess = h_derivs(u, a, s2)
                if abs(g) < _NEWTON_TOL:
                    converged = True
                    break
                step = -g / hess
                if abs(step) <= 1e-12 * (1.0 + abs(u)):
                    # The gradient's floating-point floor scales with the
                    # response magnitude; the Newton step does not, so a
                    # machine-noise step means we are at the optimum.
                    converged = True
                    break
                h0 = h_val(u, a, s2)
                t = 1.0
                u_new = u + step
                for _ in range(60):
                    u_new = u + t * step
                    if h_val(u_new, a, s2) >= h0 - 1e-12:
                        break
                    t *= 0.5
                if u_new == u:
                    converged = abs(g) < 1e-6
                    break
                u = u_new
            # h is strictly concave for every family (hess <= -1/s2), so the
            # local curvature is usable wherever the iteration stopped, and
            # the line search kept u on a monotone ascent path.
            _, hess = h_derivs(u, a, s2)
            sig = 1.0 / math.sqrt(-hess)
            if not converged:
                fellback[i, k] = 1
            nodes = u + SQRT2 * sig * gh_x
            prior = -0.5 * (nodes - a) ** 2 / s2 - 0.5 * math.log(2.0 * math.pi * s2)
            if ys.size:
                ll = _loglik_terms_numpy(
                    fam, ys[:, None], base[:, None] + zs[:, None] * nodes[None, :], tau2
                )
                hv = gh_lw + prior + np.sum(ll, axis=0)
            else:
                hv = gh_lw + prior
            hmax = float(np.max(hv))
            e = np.exp(hv - hmax)
            s0 = float(np.sum(e))
            d = nodes - u
            d_mean = float(np.sum(e * d)) / s0
            logp[i, k] = math.log(SQRT2 * sig) + hmax + math.log(s0)
            mean[i, k] = u + d_mean
            var[i, k] = float(np.sum(e * d * d)) / s0 - d_mean * d_mean
    return logp, mean, var, fellback


# ---------------------------------------------------------------------------
# path selection
# ---------------------------------------------------------------------------

# Plain-Python bindings are the default; numba rebinds them below.
_h_value = _h_value_core
_h_derivs = _h_derivs_core
_gaussian_stats_jit = None
_glmm_stats_jit = None
USE_NUMBA = False

if not _env_disabled():
    try:
        from numba import njit

        _h_value = njit(cache=True, nogil=True)(_h_value_core)
        _h_derivs = njit(cache=True, nogil=True)(_h_derivs_core)
        _gaussian_stats_jit = njit(cache=True, nogil=True)(_gaussian_stats_core)
        _glmm_stats_jit = njit(cache=True, nogil=True)(_glmm_stats_core)
        USE_NUMBA = True
    except ImportError:
        pass


class ComponentStats(NamedTuple):
    """Per (cluster, component) posterior summaries, each array (m, c)."""

    log_marginal: np.ndarray
    post_mean: np.ndarray
    post_var: np.ndarray
    used_fallback: np.ndarray


def component_stats(
    family_code: int,
    y: np.ndarray,
    x: np.ndarray,
    z: np.ndarray,
    offsets: np.ndarray,
    beta: np.ndarray,
    tau2: float | None,
    centers: np.ndarray,
    scales: np.ndarray,
    gh_x: np.ndarray | None = None,
    gh_lw: np.ndarray | None = None,
    force_quadrature: bool = False,
) -> ComponentStats:
    """Component stats for a flattened dataset on the active kernel path.

    The gaussian family routes to the closed-form kernel unless
    force_quadrature is set (the quadrature route exists for every family so
    the two can be cross-checked). Non-gaussian families require gh_x/gh_lw.
    """
    y = np.ascontiguousarray(y, dtype=float)
    x = np.ascontiguousarray(x, dtype=float)
    z = np.ascontiguousarray(z, dtype=float)
    offsets = np.ascontiguousarray(offsets, dtype=np.int64)
    beta = np.ascontiguousarray(beta, dtype=float)
    centers = np.ascontiguousarray(centers, dtype=float)
    scales = np.ascontiguousarray(scales, dtype=float)

    if family_code == GAUSSIAN and not force_quadrature:
        fn = _gaussian_stats_jit if USE_NUMBA else _gaussian_stats_numpy
        logp, mean, var = fn(y, x, z, offsets, beta, float(tau2), centers, scales)
        return ComponentStats(logp, mean, var, np.zeros(logp.shape, dtype=np.uint8))

    if gh_x is None or gh_lw is None:
        raise ValueError("quadrature kernels need gh_x and gh_lw")
    tau2_val = float(tau2) if family_code == GAUSSIAN else 0.0
    gh_x = np.ascontiguousarray(gh_x, dtype=float)
    gh_lw = np.ascontiguousarray(gh_lw, dtype=float)
    fn = _glmm_stats_jit if USE_NUMBA else _glmm_stats_numpy
    logp, mean, var, fellback = fn(
        int(family_code), y, x, z, offsets, beta, tau2_val, centers, scales, gh_x, gh_lw
    )
    return ComponentStats(logp, mean, var, fellback)
