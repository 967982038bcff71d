"""Scenario catalog and synthetic data generation.

A :class:`Scenario` pins down everything needed to draw a dataset: the
response family, the cluster layout, the fixed-effect coefficients and
covariate law, and the true random-effect law (a mixture spec plus a
scalar multiplier).  ``builtin_scenarios`` exposes the named study grid
used throughout the test-bench; ``generate`` turns a scenario into data.

Generation is reproducible: the same scenario (including its seed)
always yields the identical dataset.  Conditional studies keep the
random effects fixed and redraw only the responses, which is what
``redraw_responses`` is for.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from ._rng import child_rng
from .model import (
    ClusterData,
    Dataset,
    MixtureSpec,
    Theta,
    sample_mixture,
    sample_response,
    standardize_mixture,
    validate_family,
)

__all__ = [
    "DIST_I",
    "DIST_II",
    "Scenario",
    "GeneratedData",
    "builtin_scenarios",
    "get_scenario",
    "generate",
    "redraw_responses",
    "wages_like_scenario",
]

# The two benchmark random-intercept laws: a right-skewed mixture with
# unit variance and a bimodal one with variance 4.  Stored exactly as
# catalogued (rounded parameters, multiplier 1), not re-standardized.
DIST_I = MixtureSpec.univariate(
    weights=(0.9, 0.1), means=(-0.28, 2.56), sds=(0.28, 1.42)
)
DIST_II = MixtureSpec.univariate(
    weights=(0.5, 0.5), means=(-1.77, 1.77), sds=(0.59, 1.18)
)

_COVARIATE_LAWS = ("uniform", "wages")


def _parse_covariate_law(law: str) -> tuple[str, tuple[float, ...]]:
    parts = law.split(":")
    kind = parts[0]
    if kind == "uniform":
        if len(parts) != 3:
            raise ValueError(f"uniform law must look like 'uniform:lo:hi', got {law!r}")
        lo, hi = float(parts[1]), float(parts[2])
        if not hi > lo:
            raise ValueError(f"uniform law needs hi > lo, got {law!r}")
        return kind, (lo, hi)
    if kind == "wages":
        if len(parts) != 1:
            raise ValueError(f"wages law takes no arguments, got {law!r}")
        return kind, ()
    raise ValueError(f"unknown covariate law {law!r}; expected one of {_COVARIATE_LAWS}")


@dataclass(frozen=True)
class Scenario:
    """A complete recipe for one simulated study design.

    Attributes:
        name: catalog identifier.
        family: response family.
        m: number of clusters.
        cluster_size: an int (balanced), a (lo, hi) pair for uniform
            integer sizes, or an explicit per-cluster size sequence.
        beta: fixed-effect coefficients; the first column of X is an
            intercept and the rest follow ``covariate_law``.
        covariate_law: "uniform:lo:hi" or "wages".
        mixture: true unscaled random-intercept law.
        L: scalar multiplier on the mixture draw.
        tau2: residual variance, gaussian family only.
        conditional: if True the design is meant for studies that fix
            one draw of the random effects and replicate responses.
        seed: master seed; generation derives child streams from it.
    """

    name: str
    family: str
    m: int
    cluster_size: int | tuple[int, int] | tuple[int, ...]
    beta: tuple[float, ...]
    covariate_law: str
    mixture: MixtureSpec
    L: float = 1.0
    tau2: float | None = None
    conditional: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        validate_family(self.family)
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if not self.L > 0.0:
            raise ValueError("L must be positive")
        if self.family == "gaussian":
            if self.tau2 is None or not self.tau2 > 0.0:
                raise ValueError("gaussian scenarios need tau2 > 0")
        elif self.tau2 is not None:
            raise ValueError("tau2 only applies to gaussian scenarios")
        _parse_covariate_law(self.covariate_law)
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        cs = self.cluster_size
        if not isinstance(cs, int):
            cs = tuple(int(v) for v in cs)
            object.__setattr__(self, "cluster_size", cs)
        self._resolve_sizes_check()

    def _resolve_sizes_check(self) -> None:
        cs = self.cluster_size
        mode = _size_mode(cs, self.m)
        if mode == "balanced":
            if cs < 1:
                raise ValueError("cluster_size must be at least 1")
        elif mode == "range":
            lo, hi = cs
            if lo < 1 or hi < lo:
                raise ValueError(f"cluster size range ({lo}, {hi}) is invalid")
        elif min(cs) < 1:
            raise ValueError("explicit cluster sizes must all be at least 1")

    def true_theta(self) -> Theta:
        """The generating parameter point."""
        return Theta(
            family=self.family,
            beta=np.asarray(self.beta),
            L=np.array([[self.L]]),
            mixture=self.mixture,
            tau2=self.tau2,
        )

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "family": self.family,
            "m": self.m,
            "cluster_size": self.cluster_size,
            "beta": list(self.beta),
            "covariate_law": self.covariate_law,
            "mixture": {
                "weights": self.mixture.weights.tolist(),
                "means": self.mixture.means.tolist(),
                "scales": self.mixture.scales.tolist(),
            },
            "L": self.L,
            "tau2": self.tau2,
            "conditional": self.conditional,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        mix = doc["mixture"]
        cs = doc["cluster_size"]
        if not isinstance(cs, int):
            cs = tuple(int(v) for v in cs)
        return cls(
            name=doc["name"],
            family=doc["family"],
            m=int(doc["m"]),
            cluster_size=cs,
            beta=tuple(doc["beta"]),
            covariate_law=doc["covariate_law"],
            mixture=MixtureSpec(
                weights=np.asarray(mix["weights"]),
                means=np.asarray(mix["means"]),
                scales=np.asarray(mix["scales"]),
            ),
            L=float(doc["L"]),
            tau2=doc["tau2"],
            conditional=bool(doc["conditional"]),
            seed=int(doc["seed"]),
        )


@dataclass(frozen=True)
class GeneratedData:
    """One realized dataset plus the random effects that produced it."""

    dataset: Dataset
    u: np.ndarray
    scenario: Scenario


def _size_mode(cs, m: int) -> str:
    """Explicit sizes win over a (lo, hi) range when both could apply."""
    if isinstance(cs, int):
        return "balanced"
    if len(cs) == m:
        return "explicit"
    if len(cs) == 2:
        return "range"
    raise ValueError(f"cluster_size of length {len(cs)} fits neither m = {m} nor a range")


def _resolve_sizes(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    cs = scenario.cluster_size
    mode = _size_mode(cs, scenario.m)
    if mode == "balanced":
        return np.full(scenario.m, cs, dtype=np.int64)
    if mode == "range":
        lo, hi = cs
        return rng.integers(lo, hi + 1, size=scenario.m)
    return np.asarray(cs, dtype=np.int64)


def _draw_design(
    scenario: Scenario, n_i: int, rng: np.random.Generator
) -> np.ndarray:
    kind, args = _parse_covariate_law(scenario.covariate_law)
    q_f = len(scenario.beta)
    X = np.ones((n_i, q_f))
    if kind == "uniform":
        lo, hi = args
        if q_f > 1:
            X[:, 1:] = rng.uniform(lo, hi, size=(n_i, q_f - 1))
        return X
    # Wages-style panel: years in workforce grow within the cluster,
    # race and education are cluster-level and repeated down the rows.
    if q_f != 4:
        raise ValueError("the wages law expects beta of length 4")
    start = rng.uniform(0.0, 1.5)
    X[:, 1] = start + np.sort(rng.uniform(0.0, 12.0, size=n_i))
    X[:, 2] = float(rng.random() < 0.45)
    X[:, 3] = float(rng.integers(6, 13)) - 9.0
    return X


def generate(scenario: Scenario, rng: np.random.Generator | None = None) -> GeneratedData:
    """Draws one dataset from a scenario.

    With ``rng=None`` the scenario's own seed drives everything, so
    repeated calls give byte-identical data.  Pass an explicit generator
    to get independent replicates.
    """
    if rng is None:
        rng = child_rng(scenario.seed, "scenario")
    sizes = _resolve_sizes(scenario, rng)
    u = scenario.L * sample_mixture(scenario.mixture, None, scenario.m, rng)[:, 0]
    clusters = []
    for i in range(scenario.m):
        n_i = int(sizes[i])
        X = _draw_design(scenario, n_i, rng)
        eta = X @ np.asarray(scenario.beta) + u[i]
        y = sample_response(scenario.family, eta, scenario.tau2, rng)
        Z = np.ones((n_i, 1))
        clusters.append(ClusterData(cluster_id=str(i + 1), y=y, X=X, Z=Z))
    return GeneratedData(dataset=Dataset(clusters=tuple(clusters)), u=u, scenario=scenario)


def redraw_responses(data: GeneratedData, rng: np.random.Generator) -> GeneratedData:
    """New responses for the same designs and the same random effects."""
    scenario = data.scenario
    beta = np.asarray(scenario.beta)
    clusters = []
    for i, cl in enumerate(data.dataset.clusters):
        eta = cl.X @ beta + data.u[i]
        y = sample_response(scenario.family, eta, scenario.tau2, rng)
        clusters.append(ClusterData(cluster_id=cl.cluster_id, y=y, X=cl.X, Z=cl.Z))
    return GeneratedData(dataset=Dataset(clusters=tuple(clusters)), u=data.u, scenario=scenario)


def _name_seed(name: str) -> int:
    return zlib.crc32(name.encode("utf-8")) & 0x7FFFFFFF


def _wages_truth() -> MixtureSpec:
    spec, _ = standardize_mixture(DIST_I)
    return spec


def wages_like_scenario(m: int = 888, seed: int | None = None) -> Scenario:
    """A gaussian panel shaped like the hourly-wages study.

    Cluster sizes vary from 1 to 13 (mean about 7), the design carries
    an intercept, years in workforce, a binary race indicator, and
    centered education, and the true random intercept is right-skewed
    with a small minority component.
    """
    if m < 10:
        raise ValueError("wages-like designs need at least 10 clusters")
    name = "wages" if m == 888 else f"wages:m{m}"
    return Scenario(
        name=name,
        family="gaussian",
        m=m,
        cluster_size=(1, 13),
        beta=(1.5, 0.04, -0.1, 0.04),
        covariate_law="wages",
        mixture=_wages_truth(),
        L=0.25,
        tau2=0.1,
        conditional=False,
        seed=_name_seed(name) if seed is None else seed,
    )


def _add(cat: dict, scn: Scenario) -> None:
    cat[scn.name] = scn


def builtin_scenarios() -> dict[str, Scenario]:
    """The named study designs, keyed by name."""
    cat: dict[str, Scenario] = {}
    dists = {"distI": DIST_I, "distII": DIST_II}

    for dist_tag, mix in dists.items():
        for m in (100, 200):
            for n in (20, 40, 60, 80):
                name = f"table1:bernoulli:{dist_tag}:m{m}:n{n}"
                _add(
                    cat,
                    Scenario(
                        name=name,
                        family="bernoulli",
                        m=m,
                        cluster_size=n,
                        beta=(0.0, 1.0),
                        covariate_law="uniform:-5:5",
                        mixture=mix,
                        seed=_name_seed(name),
                    ),
                )
        for m in (50, 100):
            for n in (5, 10, 20, 40):
                name = f"table2:poisson:{dist_tag}:m{m}:n{n}"
                _add(
                    cat,
                    Scenario(
                        name=name,
                        family="poisson",
                        m=m,
                        cluster_size=n,
                        beta=(0.0, 1.0),
                        covariate_law="uniform:0:1",
                        mixture=mix,
                        seed=_name_seed(name),
                    ),
                )
        for m in (25, 50, 100):
            for n in (5, 10, 20, 40):
                name = f"tableS1:lmm:{dist_tag}:m{m}:n{n}"
                _add(
                    cat,
                    Scenario(
                        name=name,
                        family="gaussian",
                        m=m,
                        cluster_size=n,
                        beta=(0.0, 1.0),
                        covariate_law="uniform:0:1",
                        mixture=mix,
                        tau2=1.0,
                        seed=_name_seed(name),
                    ),
                )
        for family, n in (("bernoulli", 40), ("poisson", 5), ("lmm", 5)):
            name = f"cmsep:{family}:{dist_tag}"
            _add(
                cat,
                Scenario(
                    name=name,
                    family="gaussian" if family == "lmm" else family,
                    m=400,
                    cluster_size=n,
                    beta=(0.0, 1.0),
                    covariate_law="uniform:-5:5" if family == "bernoulli" else "uniform:0:1",
                    mixture=mix,
                    tau2=1.0 if family == "lmm" else None,
                    conditional=True,
                    seed=_name_seed(name),
                ),
            )

    name = "boot:lmm:normal:m200:n7"
    _add(
        cat,
        Scenario(
            name=name,
            family="gaussian",
            m=200,
            cluster_size=7,
            beta=(0.0, 1.0),
            covariate_law="uniform:0:1",
            mixture=MixtureSpec.standard_normal(),
            tau2=1.0,
            seed=_name_seed(name),
        ),
    )
    _add(cat, wages_like_scenario())
    return cat


def get_scenario(name: str) -> Scenario:
    """Looks up a catalog scenario, with a helpful error on a miss."""
    cat = builtin_scenarios()
    if name not in cat:
        known = "\n  ".join(sorted(cat))
        raise KeyError(f"unknown scenario {name!r}; available:\n  {known}")
    return cat[name]


def scaled_scenario(base: Scenario, **overrides) -> Scenario:
    """A copy of a scenario with fields replaced (name gets a suffix)."""
    if "name" not in overrides:
        changed = ",".join(sorted(overrides))
        overrides["name"] = f"{base.name}#{changed}"
    return replace(base, **overrides)
