"""Simulation and bootstrap estimators of prediction error.

Two notions of mean squared error of prediction are measured for the
random intercepts.  The unconditional flavor averages squared gaps
between predictor and truth over fresh draws of everything; the
conditional flavor fixes one draw of the random effects and averages
only over responses.  Both are estimated by brute replication here, and
by a parametric bootstrap when only one observed dataset exists.

Replicate streams are derived from a single master seed, one child per
replicate index, so results do not depend on the number of worker
threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._rng import child_rng
from .fit import FitConfig, FitError, FittedModel, fit_ml
from .lmm import LmmClusterMats, u1_mixture_mc, u1_normal
from .model import Dataset, sample_mixture, sample_response
from .predict import ebp_all
from .simlab import GeneratedData, Scenario, generate, redraw_responses

__all__ = [
    "HarnessError",
    "MsepEntry",
    "MsepResult",
    "UmsepStudy",
    "CmsepStudy",
    "simulated_umsep",
    "simulated_cmsep",
    "bootstrap_msep",
    "u1_report",
]

# A study aborts rather than report numbers once more than this share
# of replicates has been dropped for a config.
_MAX_DROP_FRACTION = 0.2

_CONDITIONAL_CAVEAT = (
    "conditional bootstrap fixes the random effects at their predicted "
    "values, which are shrunk toward the fitted prior mean; error for "
    "tail clusters is understated"
)


class HarnessError(RuntimeError):
    """Too many replicates failed for the estimates to be trusted."""


@dataclass(frozen=True)
class MsepEntry:
    """Squared-gap summary for one target (a config or a cluster)."""

    target: str
    msep: float
    mc_se: float
    n_reps: int
    bias: float | None = None
    variance: float | None = None


@dataclass(frozen=True)
class MsepResult:
    """A set of per-target entries plus their overall mean."""

    kind: str
    entries: tuple[MsepEntry, ...]
    grand_mean: float
    n_failed: int
    caveat: str | None = None

    def entry(self, target: str) -> MsepEntry:
        for e in self.entries:
            if e.target == target:
                return e
        raise KeyError(f"no entry for target {target!r}")


@dataclass
class UmsepStudy:
    """Unconditional study output: one entry per fit config."""

    scenario: Scenario
    reps: int
    results: tuple[MsepEntry, ...]
    records: list[dict]

    def result(self, tag: str) -> MsepEntry:
        for e in self.results:
            if e.target == tag:
                return e
        raise KeyError(f"no result for config {tag!r}")


@dataclass
class CmsepStudy:
    """Conditional study output: per-cluster curves for each config."""

    scenario: Scenario
    reps: int
    u: np.ndarray
    by_config: dict[str, MsepResult]
    w_draws: dict[str, np.ndarray]


def _master_seed(rng, fallback: int) -> int:
    if rng is None:
        return int(fallback)
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(np.iinfo(np.int64).max))


def _check_drops(n_failed: int, reps: int, what: str) -> None:
    if n_failed > _MAX_DROP_FRACTION * reps:
        msg = f"{what}: {n_failed} of {reps} replicates failed; refusing to summarize"
        raise HarnessError(msg)


def _fit_and_predict(
    dataset: Dataset, config: FitConfig, fit_rng: np.random.Generator
) -> np.ndarray:
    model = fit_ml(dataset, config, rng=fit_rng)
    preds = ebp_all(model, dataset)
    return np.array([p.w for p in preds])


def simulated_umsep(
    scenario: Scenario,
    fit_configs: tuple[FitConfig, ...],
    reps: int = 100,
    rng=None,
    threads: int = 1,
) -> UmsepStudy:
    """Estimates unconditional MSEP by refitting fresh datasets.

    Each replicate draws new random effects and responses, fits every
    config, and records the mean squared gap between predicted and true
    intercepts.  Replicates whose fit fails are dropped per config; more
    than 20 percent of drops aborts the study.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    if not fit_configs:
        raise ValueError("need at least one fit config")
    tags = [c.tag for c in fit_configs]
    if len(set(tags)) != len(tags):
        raise ValueError(f"fit config tags must be distinct, got {tags}")
    master = _master_seed(rng, scenario.seed)

    def one_rep(s: int) -> list[float | None]:
        data_rng = child_rng(master, "simulate", s)
        data = generate(scenario, rng=data_rng)
        out: list[float | None] = []
        for j, config in enumerate(fit_configs):
            fit_rng = child_rng(master, "fit", s, j)
            try:
                w = _fit_and_predict(data.dataset, config, fit_rng)
            except FitError:
                out.append(None)
                continue
            out.append(float(np.mean((w - data.u) ** 2)))
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one_rep, range(reps)))
    else:
        rows = [one_rep(s) for s in range(reps)]

    results = []
    records: list[dict] = []
    for j, tag in enumerate(tags):
        vals = np.array([row[j] for row in rows if row[j] is not None])
        n_failed = reps - vals.size
        _check_drops(n_failed, reps, f"umsep[{tag}]")
        for s, row in enumerate(rows):
            if row[j] is not None:
                records.append({"config": tag, "rep": s, "umsep": row[j]})
        results.append(
            MsepEntry(
                target=tag,
                msep=float(vals.mean()),
                mc_se=float(vals.std(ddof=1) / np.sqrt(vals.size)),
                n_reps=int(vals.size),
            )
        )
    return UmsepStudy(scenario=scenario, reps=reps, results=tuple(results), records=records)


def simulated_cmsep(
    scenario: Scenario,
    fit_configs: tuple[FitConfig, ...],
    reps: int = 100,
    rng=None,
    u: np.ndarray | None = None,
    threads: int = 1,
) -> CmsepStudy:
    """Estimates conditional MSEP given one fixed set of random effects.

    The random effects are drawn once (or supplied), then ``reps``
    response vectors are simulated around them.  Per cluster the mean
    squared gap, its bias and variance split, and a Monte Carlo standard
    error are reported; the raw predictor draws are kept for coverage
    work downstream.
    """
    if reps < 2:
        raise ValueError("reps must be at least 2")
    if not fit_configs:
        raise ValueError("need at least one fit config")
    master = _master_seed(rng, scenario.seed)

    base_rng = child_rng(master, "scenario")
    base = generate(scenario, rng=base_rng)
    if u is not None:
        u = np.asarray(u, dtype=float).reshape(-1)
        if u.size != scenario.m:
            raise ValueError(f"u has {u.size} entries but the scenario has m = {scenario.m}")
        # Responses are redrawn inside every replicate, so only the
        # effects need substituting here.
        base = GeneratedData(dataset=base.dataset, u=u, scenario=scenario)
    fixed_u = base.u

    def one_rep(s: int) -> list[np.ndarray | None]:
        data = redraw_responses(base, child_rng(master, "simulate", s))
        out: list[np.ndarray | None] = []
        for j, config in enumerate(fit_configs):
            fit_rng = child_rng(master, "fit", s, j)
            try:
                out.append(_fit_and_predict(data.dataset, config, fit_rng))
            except FitError:
                out.append(None)
        return out

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one_rep, range(reps)))
    else:
        rows = [one_rep(s) for s in range(reps)]

    ids = [cl.cluster_id for cl in base.dataset.clusters]
    by_config: dict[str, MsepResult] = {}
    w_draws: dict[str, np.ndarray] = {}
    for j, config in enumerate(fit_configs):
        draws = np.array([row[j] for row in rows if row[j] is not None])
        n_failed = reps - draws.shape[0]
        _check_drops(n_failed, reps, f"cmsep[{config.tag}]")
        gaps = draws - fixed_u
        sq = gaps**2
        bias = gaps.mean(axis=0)
        variance = gaps.var(axis=0)
        msep = sq.mean(axis=0)
        se = sq.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
        entries = tuple(
            MsepEntry(
                target=ids[i],
                msep=float(msep[i]),
                mc_se=float(se[i]),
                n_reps=int(draws.shape[0]),
                bias=float(bias[i]),
                variance=float(variance[i]),
            )
            for i in range(len(ids))
        )
        by_config[config.tag] = MsepResult(
            kind="cmsep",
            entries=entries,
            grand_mean=float(msep.mean()),
            n_failed=n_failed,
        )
        w_draws[config.tag] = draws
    return CmsepStudy(
        scenario=scenario, reps=reps, u=fixed_u, by_config=by_config, w_draws=w_draws
    )


def _simulate_at(
    model: FittedModel, dataset: Dataset, u: np.ndarray, rng: np.random.Generator
) -> Dataset:
    theta = model.theta
    beta = theta.beta
    clusters = []
    for i, cl in enumerate(dataset.clusters):
        eta = cl.X @ beta + u[i]
        y = sample_response(theta.family, eta, theta.tau2, rng)
        clusters.append(type(cl)(cluster_id=cl.cluster_id, y=y, X=cl.X, Z=cl.Z))
    return Dataset(clusters=tuple(clusters))


def bootstrap_msep(
    model: FittedModel,
    dataset: Dataset,
    B: int = 200,
    mode: str = "unconditional",
    rng=None,
) -> MsepResult:
    """Parametric bootstrap estimate of prediction error.

    Unconditional mode redraws the random effects from the fitted law on
    every replicate; conditional mode holds them fixed at the predicted
    values from the observed data.  Either way, responses are simulated
    from the fitted model, the same config is refitted, and squared gaps
    between the refitted predictors and the replicate's effects are
    averaged per cluster.
    """
    if mode not in ("unconditional", "conditional"):
        raise ValueError(f"mode must be 'unconditional' or 'conditional', got {mode!r}")
    if B < 50:
        raise ValueError("B must be at least 50")
    master = _master_seed(rng, 0)
    theta = model.theta
    m = dataset.n_clusters
    L = float(theta.L[0, 0])

    w_hat = None
    if mode == "conditional":
        w_hat = np.array([p.w for p in ebp_all(model, dataset)])

    sq_sums = np.zeros(m)
    sq_sq_sums = np.zeros(m)
    n_ok = 0
    for b in range(B):
        boot_rng = child_rng(master, "bootstrap", b)
        if mode == "unconditional":
            u_star = L * sample_mixture(theta.mixture, None, m, boot_rng)[:, 0]
        else:
            u_star = w_hat
        data_star = _simulate_at(model, dataset, u_star, boot_rng)
        fit_rng = child_rng(master, "bootstrap", b, 1)
        try:
            w_star = _fit_and_predict(data_star, model.config, fit_rng)
        except FitError:
            continue
        sq = (w_star - u_star) ** 2
        sq_sums += sq
        sq_sq_sums += sq**2
        n_ok += 1

    n_failed = B - n_ok
    _check_drops(n_failed, B, f"bootstrap[{mode}]")
    per = sq_sums / n_ok
    var = sq_sq_sums / n_ok - per**2
    se = np.sqrt(np.maximum(var, 0.0) / n_ok)
    ids = [cl.cluster_id for cl in dataset.clusters]
    entries = tuple(
        MsepEntry(target=ids[i], msep=float(per[i]), mc_se=float(se[i]), n_reps=n_ok)
        for i in range(m)
    )
    return MsepResult(
        kind=f"bootstrap:{mode}",
        entries=entries,
        grand_mean=float(per.mean()),
        n_failed=n_failed,
        caveat=_CONDITIONAL_CAVEAT if mode == "conditional" else None,
    )


def u1_report(
    model: FittedModel, dataset: Dataset, reps: int = 1000, rng=None
) -> float:
    """Mean over clusters of the leading unconditional MSEP term.

    Exact for a single normal component; otherwise estimated by Monte
    Carlo with ``reps`` response draws per cluster.  Linear models only.
    """
    theta = model.theta
    if theta.family != "gaussian":
        raise ValueError("the leading-term report is only defined for linear models")
    master = _master_seed(rng, 0)
    vals = []
    for i, cl in enumerate(dataset.clusters):
        if theta.n_components == 1:
            mats = LmmClusterMats.from_cluster(cl, theta)
            vals.append(float(u1_normal(mats)[0, 0]))
        else:
            mc_rng = child_rng(master, "mc", i)
            u1, _ = u1_mixture_mc(cl, theta, reps=reps, rng=mc_rng)
            vals.append(float(u1[0, 0]))
    return float(np.mean(vals))
