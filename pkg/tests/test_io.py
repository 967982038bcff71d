"""CSV ingestion, model serialization, and report files."""

import json

import numpy as np
import pytest

from glmm_mispredict.fit import FitConfig, fit_ml
from glmm_mispredict.io import (
    IngestError,
    export_csv,
    ingest_csv,
    model_from_doc,
    model_to_doc,
    ndjson_line,
    read_model,
    read_msep_csv,
    read_predictions_csv,
    write_model,
    write_msep_csv,
    write_predictions_csv,
)
from glmm_mispredict.msep import bootstrap_msep
from glmm_mispredict.predict import ebp_all
from glmm_mispredict.simlab import generate, wages_like_scenario


def test_ingest_happy_path(tmp_path):
    p = tmp_path / "data.csv"
    p.write_text(
        "cluster,y,x:a,x:b,z:slope\n"
        "one,1.5,0.1,2.0,1.0\n"
        "one,0.5,0.2,3.0,1.0\n"
        "two,2.5,0.3,4.0,1.0\n"
    )
    ds = ingest_csv(str(p))
    assert [cl.cluster_id for cl in ds.clusters] == ["one", "two"]
    assert ds.q_f == 2 and ds.q_r == 1
    np.testing.assert_allclose(ds.clusters[0].y, [1.5, 0.5])
    np.testing.assert_allclose(ds.clusters[0].X, [[0.1, 2.0], [0.2, 3.0]])
    np.testing.assert_allclose(ds.clusters[1].Z, [[1.0]])


def test_ingest_preserves_first_appearance_order(tmp_path):
    p = tmp_path / "data.csv"
    p.write_text(
        "cluster,y,x:v,z:icpt\n"
        "zed,1.0,0.0,1.0\n"
        "alpha,2.0,0.0,1.0\n"
        "zed,3.0,0.0,1.0\n"
    )
    ds = ingest_csv(str(p))
    assert [cl.cluster_id for cl in ds.clusters] == ["zed", "alpha"]
    np.testing.assert_allclose(ds.clusters[0].y, [1.0, 3.0])


def test_ingest_intercept_adds_ones_column(tmp_path):
    p = tmp_path / "data.csv"
    p.write_text("cluster,y,x:v\n1,1.0,0.7\n1,0.0,0.9\n")
    # without the flag this file has no random-effect columns at all
    with pytest.raises(IngestError, match="intercept"):
        ingest_csv(str(p))
    ds = ingest_csv(str(p), intercept=True)
    assert ds.q_f == 2
    np.testing.assert_allclose(ds.clusters[0].X[:, 0], 1.0)
    np.testing.assert_allclose(ds.clusters[0].X[:, 1], [0.7, 0.9])
    np.testing.assert_allclose(ds.clusters[0].Z, [[1.0], [1.0]])


def test_ingest_error_cites_line_number(tmp_path):
    rows = ["cluster,y,x:v,z:i"]
    rows += [f"c,{i}.0,1.0,1.0" for i in range(1, 6)]
    rows.append("c,not-a-number,1.0,1.0")  # line 7 of the file
    p = tmp_path / "bad.csv"
    p.write_text("\n".join(rows) + "\n")
    with pytest.raises(IngestError, match="line 7"):
        ingest_csv(str(p))


def test_ingest_structural_errors(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("cluster,y,x:v,z:i\n1,1.0,2.0,1.0\n1,1.0\n")
    with pytest.raises(IngestError, match="line 3"):
        ingest_csv(str(ragged))

    unknown = tmp_path / "unknown.csv"
    unknown.write_text("cluster,y,x:v,z:i,weight\n1,1.0,2.0,1.0,3.0\n")
    with pytest.raises(IngestError, match="weight"):
        ingest_csv(str(unknown))

    empty_id = tmp_path / "emptyid.csv"
    empty_id.write_text("cluster,y,x:v,z:i\n,1.0,2.0,1.0\n")
    with pytest.raises(IngestError, match="line 2"):
        ingest_csv(str(empty_id))

    bare = tmp_path / "bare.csv"
    bare.write_text("cluster,y\n1,1.0\n")
    with pytest.raises(IngestError):
        ingest_csv(str(bare))

    nothing = tmp_path / "nothing.csv"
    nothing.write_text("")
    with pytest.raises(IngestError):
        ingest_csv(str(nothing))


def test_export_then_ingest_is_identity(tmp_path):
    data = generate(wages_like_scenario(m=25, seed=4))
    p = tmp_path / "round.csv"
    export_csv(str(p), data.dataset)
    back = ingest_csv(str(p))
    assert back.n_clusters == data.dataset.n_clusters
    for a, b in zip(data.dataset.clusters, back.clusters):
        assert a.cluster_id == b.cluster_id
        np.testing.assert_array_equal(a.y, b.y)   # repr round-trips floats
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.Z, b.Z)


def _small_model(c=2):
    data = generate(wages_like_scenario(m=20, seed=9))
    return data, fit_ml(
        data.dataset,
        FitConfig(family="gaussian", n_components=c, n_starts=1),
        rng=np.random.default_rng(0),
    )


def test_model_json_round_trip_exact(tmp_path):
    data, model = _small_model()
    preds = ebp_all(model, data.dataset)
    per_cluster = [
        {"cluster": p.cluster_id, "w": p.w, "v": p.v} for p in preds
    ]
    p = tmp_path / "model.json"
    write_model(str(p), model, per_cluster=per_cluster)
    loaded, pc = read_model(str(p))
    np.testing.assert_array_equal(loaded.theta.beta, model.theta.beta)
    np.testing.assert_array_equal(loaded.theta.L, model.theta.L)
    assert loaded.theta.tau2 == model.theta.tau2
    np.testing.assert_array_equal(
        loaded.theta.mixture.weights, model.theta.mixture.weights
    )
    np.testing.assert_array_equal(
        loaded.theta.mixture.means, model.theta.mixture.means
    )
    np.testing.assert_array_equal(
        loaded.theta.mixture.scales, model.theta.mixture.scales
    )
    assert loaded.loglik == model.loglik
    assert loaded.converged == model.converged
    assert loaded.config.n_components == 2
    assert pc == per_cluster
    # predictions from the reloaded model are bit-identical
    again = ebp_all(loaded, data.dataset)
    for x, y in zip(preds, again):
        assert x.w == y.w and x.v == y.v


def test_model_doc_schema_guard():
    _, model = _small_model(c=1)
    doc = model_to_doc(model)
    assert doc["schema_version"] == 1
    assert len(doc["mixture"]["weights"]) == 1
    doc["schema_version"] = 2
    with pytest.raises(ValueError, match="schema"):
        model_from_doc(doc)


def test_handwritten_model_doc_loads():
    # a truth spec written by hand, not produced by the fitter
    doc = {
        "schema_version": 1,
        "family": "gaussian",
        "beta": [0.0, 1.0],
        "tau2": 1.0,
        "L": [[2.0]],
        "mixture": {
            "weights": [0.5, 0.5],
            "means": [[-0.8], [0.8]],
            "scales": [[[0.6]], [[0.6]]],
        },
        "loglik": 0.0,
        "converged": True,
        "per_cluster": [],
        "config": {"family": "gaussian", "n_components": 2},
        "fit": {},
    }
    model, _ = model_from_doc(doc)
    data = generate(wages_like_scenario(m=12, seed=2))
    preds = ebp_all(model, data.dataset)
    assert len(preds) == 12
    assert all(np.isfinite(p.w) and p.v > 0 for p in preds)


def test_predictions_csv_round_trip(tmp_path):
    data, model = _small_model(c=1)
    preds = ebp_all(model, data.dataset)
    p = tmp_path / "preds.csv"
    write_predictions_csv(str(p), preds)
    raw = p.read_text().splitlines()
    assert raw[0] == "cluster,w,v,used_fallback"
    rows = read_predictions_csv(str(p))
    assert [r["cluster"] for r in rows] == [x.cluster_id for x in preds]
    for r, x in zip(rows, preds):
        assert set(r) == {"cluster", "w", "v"}
        assert r["w"] == x.w
        assert r["v"] == x.v


def test_msep_csv_round_trip(tmp_path):
    data, model = _small_model(c=1)
    res = bootstrap_msep(model, data.dataset, B=50, rng=3)
    p = tmp_path / "msep.csv"
    write_msep_csv(str(p), res)
    per_target, overall = read_msep_csv(str(p))
    assert overall == res.grand_mean
    assert len(per_target) == len(res.entries)
    for e in res.entries:
        assert per_target[e.target] == e.msep


def test_ndjson_line_is_stable_bytes():
    rec = {"b": 2, "a": [1.5, None], "c": {"y": False, "x": "s"}}
    line = ndjson_line(rec)
    assert line == '{"a":[1.5,null],"b":2,"c":{"x":"s","y":false}}\n'
    assert ndjson_line(rec) == line
    assert json.loads(line) == {"a": [1.5, None], "b": 2,
                                "c": {"x": "s", "y": False}}
