"""Scenario catalog and data generation."""

import numpy as np
import pytest

from glmm_mispredict.model import mixture_moments
from glmm_mispredict.simlab import (
    DIST_I,
    DIST_II,
    Scenario,
    builtin_scenarios,
    generate,
    get_scenario,
    redraw_responses,
    scaled_scenario,
    wages_like_scenario,
)


def test_catalog_is_complete():
    cat = builtin_scenarios()
    assert len(cat) >= 30
    # one representative per study block
    for name in (
        "table1:bernoulli:distI:m100:n20",
        "table1:bernoulli:distII:m200:n80",
        "table2:poisson:distI:m50:n5",
        "tableS1:lmm:distII:m100:n40",
        "cmsep:bernoulli:distI",
        "cmsep:lmm:distII",
        "boot:lmm:normal:m200:n7",
        "wages",
    ):
        assert name in cat, name
    for name, scn in cat.items():
        assert scn.name == name


def test_effect_laws_have_pinned_moments():
    mean1, var1 = mixture_moments(DIST_I)
    assert mean1[0] == pytest.approx(0.004, abs=1e-12)
    assert var1[0, 0] == pytest.approx(0.998104, abs=1e-9)
    mean2, var2 = mixture_moments(DIST_II)
    assert mean2[0] == pytest.approx(0.0, abs=1e-12)
    assert var2[0, 0] == pytest.approx(4.00315, abs=1e-9)


def test_generate_is_deterministic():
    scn = get_scenario("table2:poisson:distI:m50:n5")
    a = generate(scn)
    b = generate(scn)
    np.testing.assert_array_equal(a.u, b.u)
    for ca, cb in zip(a.dataset.clusters, b.dataset.clusters):
        np.testing.assert_array_equal(ca.y, cb.y)
        np.testing.assert_array_equal(ca.X, cb.X)


def test_scenarios_differ_across_names():
    a = generate(get_scenario("table2:poisson:distI:m50:n5"))
    b = generate(get_scenario("table2:poisson:distI:m100:n5"))
    assert not np.array_equal(a.u, b.u[: a.u.size])


def test_doc_round_trip_regenerates_identically():
    # Scenario holds arrays, so compare documents and regenerated data
    # rather than dataclass equality.
    for name in ("table1:bernoulli:distI:m100:n20", "wages"):
        scn = get_scenario(name)
        doc = scn.to_dict()
        back = Scenario.from_dict(doc)
        assert back.to_dict() == doc
        a = generate(scn)
        b = generate(back)
        np.testing.assert_array_equal(a.u, b.u)
        for ca, cb in zip(a.dataset.clusters, b.dataset.clusters):
            np.testing.assert_array_equal(ca.y, cb.y)


def test_redraw_responses_keeps_design_and_effects():
    scn = scaled_scenario(get_scenario("tableS1:lmm:distI:m25:n5"), m=10,
                          name="redraw")
    data = generate(scn)
    fresh = redraw_responses(data, np.random.default_rng(5))
    np.testing.assert_array_equal(fresh.u, data.u)
    changed = False
    for ca, cb in zip(data.dataset.clusters, fresh.dataset.clusters):
        np.testing.assert_array_equal(ca.X, cb.X)
        np.testing.assert_array_equal(ca.Z, cb.Z)
        changed = changed or not np.array_equal(ca.y, cb.y)
    assert changed


def test_true_theta_reflects_scenario():
    scn = get_scenario("tableS1:lmm:distII:m25:n5")
    theta = scn.true_theta()
    assert theta.family == "gaussian"
    assert theta.tau2 == pytest.approx(1.0)
    np.testing.assert_allclose(theta.beta, [0.0, 1.0])
    assert theta.L[0, 0] == pytest.approx(1.0)
    mean, var = mixture_moments(theta.mixture)
    assert var[0, 0] == pytest.approx(4.00315, abs=1e-9)


def test_cluster_size_modes():
    base = get_scenario("tableS1:lmm:distI:m25:n5")

    balanced = scaled_scenario(base, m=4, cluster_size=3, name="bal")
    sizes = [cl.n for cl in generate(balanced).dataset.clusters]
    assert sizes == [3, 3, 3, 3]

    ranged = scaled_scenario(base, m=6, cluster_size=(2, 5), name="rng")
    sizes = [cl.n for cl in generate(ranged).dataset.clusters]
    assert all(2 <= n <= 5 for n in sizes)

    explicit = scaled_scenario(base, m=3, cluster_size=(4, 1, 2), name="exp")
    sizes = [cl.n for cl in generate(explicit).dataset.clusters]
    assert sizes == [4, 1, 2]

    # a length-m tuple is read as explicit sizes even when m == 2
    two = scaled_scenario(base, m=2, cluster_size=(7, 3), name="two")
    sizes = [cl.n for cl in generate(two).dataset.clusters]
    assert sizes == [7, 3]


def test_scenario_validation():
    base = get_scenario("tableS1:lmm:distI:m25:n5")
    with pytest.raises(ValueError):
        scaled_scenario(base, m=0, name="bad-m")
    with pytest.raises(ValueError):
        scaled_scenario(base, cluster_size=(1, 2, 3), name="bad-sizes")
    with pytest.raises(ValueError):
        scaled_scenario(base, family="gamma", name="bad-family")
    with pytest.raises(ValueError):
        scaled_scenario(base, tau2=None, name="lmm-needs-tau2")
    with pytest.raises(ValueError):
        scaled_scenario(base, covariate_law="cauchy", name="bad-law")


def test_get_scenario_unknown_name_lists_catalog():
    with pytest.raises(KeyError) as err:
        get_scenario("nope")
    msg = err.value.args[0]
    assert "nope" in msg
    assert "wages" in msg


def test_scaled_scenario_marks_name():
    base = get_scenario("tableS1:lmm:distI:m25:n5")
    small = scaled_scenario(base, m=7)
    assert small.m == 7
    assert small.name != base.name
    assert "m" in small.name.split("#", 1)[1]


def test_wages_like_shapes():
    scn = wages_like_scenario(m=40)
    data = generate(scn)
    assert data.dataset.n_clusters == 40
    assert data.dataset.q_f == 4
    for cl in data.dataset.clusters:
        assert 1 <= cl.n <= 13
        assert np.all(cl.X[:, 0] == 1.0)          # intercept
        assert np.all(np.diff(cl.X[:, 1]) >= 0)   # tenure increases
        assert len(set(cl.X[:, 2])) == 1          # cluster-level indicator
        assert cl.X[0, 2] in (0.0, 1.0)
        assert float(cl.X[0, 3]).is_integer()     # education offset
    # log-wage responses live on a sane scale
    ys = np.concatenate([cl.y for cl in data.dataset.clusters])
    assert 0.0 < ys.mean() < 4.0


def test_conditional_flag_set_on_conditional_studies():
    assert get_scenario("cmsep:poisson:distI").conditional
    assert not get_scenario("table2:poisson:distI:m50:n5").conditional
