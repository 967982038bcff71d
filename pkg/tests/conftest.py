"""Shared helpers plus the acceptance summary hook."""

import numpy as np
import pytest

from glmm_mispredict.model import ClusterData, Dataset, MixtureSpec, Theta

# Populated by tests/test_acceptance.py; printed at the end of the run so
# the log always carries one line per criterion.
CRITERION_RESULTS: list[tuple[int, bool, str]] = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    CRITERION_RESULTS.append((number, passed, detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not CRITERION_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(CRITERION_RESULTS):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status} - {detail}")


def make_mixture(rng: np.random.Generator, c: int) -> MixtureSpec:
    """A random standardized univariate mixture with c components."""
    from glmm_mispredict.model import standardize_mixture

    w = rng.dirichlet(np.full(c, 4.0))
    mu = rng.normal(0.0, 1.2, size=c)
    sd = rng.uniform(0.4, 1.6, size=c)
    spec, _ = standardize_mixture(MixtureSpec.univariate(w, mu, sd))
    return spec


def make_theta(
    rng: np.random.Generator,
    family: str = "gaussian",
    c: int = 1,
    q_f: int = 2,
) -> Theta:
    mixture = MixtureSpec.standard_normal() if c == 1 else make_mixture(rng, c)
    return Theta(
        family=family,
        beta=rng.normal(0.0, 0.5, size=q_f),
        L=np.array([[rng.uniform(0.5, 1.6)]]),
        mixture=mixture,
        tau2=rng.uniform(0.5, 1.5) if family == "gaussian" else None,
    )


def make_cluster(
    rng: np.random.Generator,
    theta: Theta,
    n: int,
    cluster_id: str = "1",
    x_scale: float = 1.0,
) -> ClusterData:
    """One cluster simulated from theta (random intercept design)."""
    from glmm_mispredict.model import sample_mixture, sample_response

    q_f = theta.beta.size
    X = np.ones((n, q_f))
    if q_f > 1:
        X[:, 1:] = rng.uniform(-x_scale, x_scale, size=(n, q_f - 1))
    u = sample_mixture(theta.mixture, theta.L, 1, rng)[0, 0]
    eta = X @ theta.beta + u
    y = sample_response(theta.family, eta, theta.tau2, rng)
    return ClusterData(cluster_id=cluster_id, y=y, X=X, Z=np.ones((n, 1)))


def make_dataset(
    rng: np.random.Generator, theta: Theta, m: int, n: int
) -> Dataset:
    clusters = [
        make_cluster(rng, theta, n, cluster_id=str(i + 1)) for i in range(m)
    ]
    return Dataset(clusters=tuple(clusters))


@pytest.fixture
def rng():
    return np.random.default_rng(20260814)
