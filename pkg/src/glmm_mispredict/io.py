"""File formats: long-format CSV data, JSON models, ndjson streams.

The data format is one observation per row with a ``cluster`` id, a
``y`` response, and covariate columns named with ``x:`` or ``z:``
prefixes to mark their role.  Models persist as a versioned JSON
document; floats survive the round trip exactly because the JSON writer
emits shortest-representation decimals.  Simulation streams are ndjson
with stable key order so identical runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
from typing import Iterable, Sequence

import numpy as np

from .fit import FitConfig, FittedModel
from .model import ClusterData, Dataset, MixtureSpec, Theta
from .msep import MsepEntry, MsepResult
from .predict import Prediction

__all__ = [
    "IngestError",
    "ingest_csv",
    "export_csv",
    "model_to_doc",
    "model_from_doc",
    "write_model",
    "read_model",
    "write_predictions_csv",
    "read_predictions_csv",
    "write_msep_csv",
    "read_msep_csv",
    "write_ndjson",
    "ndjson_line",
]

MODEL_SCHEMA_VERSION = 1

_OVERALL = "__overall__"


class IngestError(ValueError):
    """A data file failed to parse; the message carries the line number."""


def _parse_header(fields: Sequence[str], path: str) -> tuple[list[int], list[int], int, int]:
    x_cols: list[int] = []
    z_cols: list[int] = []
    cluster_col = -1
    y_col = -1
    for j, raw in enumerate(fields):
        name = raw.strip()
        if name == "cluster":
            cluster_col = j
        elif name == "y":
            y_col = j
        elif name.startswith("x:"):
            x_cols.append(j)
        elif name.startswith("z:"):
            z_cols.append(j)
        else:
            msg = (
                f"{path}: unknown column {name!r}; expected 'cluster', 'y', "
                "or names prefixed with 'x:' / 'z:'"
            )
            raise IngestError(msg)
    if cluster_col < 0 or y_col < 0:
        raise IngestError(f"{path}: header must include 'cluster' and 'y' columns")
    return x_cols, z_cols, cluster_col, y_col


def ingest_csv(path: str, intercept: bool = False) -> Dataset:
    """Reads a long-format CSV into a Dataset.

    Clusters keep their first-appearance order and rows within a cluster
    keep file order, so export followed by ingest is the identity.  With
    ``intercept=True`` a leading column of ones is added to both designs;
    without it the file must declare the columns explicitly.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: file is empty") from None
        x_cols, z_cols, cluster_col, y_col = _parse_header(header, path)
        if not x_cols and not intercept:
            raise IngestError(f"{path}: no fixed-effect columns; add x: columns or set intercept")
        if not z_cols and not intercept:
            raise IngestError(f"{path}: no random-effect columns; add z: columns or set intercept")

        order: list[str] = []
        rows: dict[str, list[tuple[float, list[float], list[float]]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                msg = f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}"
                raise IngestError(msg)

            def cell(j: int) -> float:
                text = row[j].strip()
                try:
                    return float(text)
                except ValueError:
                    name = header[j].strip()
                    msg = f"{path}: line {lineno}: non-numeric value {text!r} in column {name!r}"
                    raise IngestError(msg) from None

            cid = row[cluster_col].strip()
            if not cid:
                raise IngestError(f"{path}: line {lineno}: empty cluster id")
            if cid not in rows:
                order.append(cid)
                rows[cid] = []
            rows[cid].append((cell(y_col), [cell(j) for j in x_cols], [cell(j) for j in z_cols]))

    if not order:
        raise IngestError(f"{path}: no data rows")
    clusters = []
    for cid in order:
        recs = rows[cid]
        y = np.array([r[0] for r in recs])
        X = np.array([r[1] for r in recs], dtype=float).reshape(len(recs), len(x_cols))
        Z = np.array([r[2] for r in recs], dtype=float).reshape(len(recs), len(z_cols))
        if intercept:
            ones = np.ones((len(recs), 1))
            X = np.hstack([ones, X])
            Z = np.hstack([ones, Z])
        clusters.append(ClusterData(cluster_id=cid, y=y, X=X, Z=Z))
    return Dataset(clusters=tuple(clusters))


def export_csv(
    path: str,
    dataset: Dataset,
    x_names: Sequence[str] | None = None,
    z_names: Sequence[str] | None = None,
) -> None:
    """Writes a Dataset back to the long CSV format (all columns explicit)."""
    q_f, q_r = dataset.q_f, dataset.q_r
    x_names = list(x_names) if x_names is not None else [f"x{j + 1}" for j in range(q_f)]
    z_names = list(z_names) if z_names is not None else [f"z{j + 1}" for j in range(q_r)]
    if len(x_names) != q_f or len(z_names) != q_r:
        raise ValueError("column name lists do not match the design shapes")
    header = ["cluster", "y"] + [f"x:{n}" for n in x_names] + [f"z:{n}" for n in z_names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for cl in dataset.clusters:
            for j in range(cl.n):
                row = [cl.cluster_id, repr(float(cl.y[j]))]
                row += [repr(float(v)) for v in cl.X[j]]
                row += [repr(float(v)) for v in cl.Z[j]]
                writer.writerow(row)


def model_to_doc(model: FittedModel, per_cluster: list[dict] | None = None) -> dict:
    """Serializes a fitted model to the versioned JSON schema."""
    theta = model.theta
    cfg = model.config
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "family": theta.family,
        "beta": theta.beta.tolist(),
        "tau2": theta.tau2,
        "L": theta.L.tolist(),
        "mixture": {
            "weights": theta.mixture.weights.tolist(),
            "means": theta.mixture.means.tolist(),
            "scales": theta.mixture.scales.tolist(),
        },
        "loglik": model.loglik,
        "converged": model.converged,
        "per_cluster": per_cluster if per_cluster is not None else [],
        "config": {
            "family": cfg.family,
            "n_components": cfg.n_components,
            "gh_order": cfg.gh_order,
            "n_starts": cfg.n_starts,
            "label": cfg.label,
        },
        "fit": {
            "n_params": model.n_params,
            "n_clusters": model.n_clusters,
            "n_obs": model.n_obs,
            "runtime_s": model.runtime_s,
            "best_start": model.best_start,
        },
    }


def model_from_doc(doc: dict) -> tuple[FittedModel, list[dict]]:
    """Rebuilds a FittedModel (and the stored per-cluster summaries)."""
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        msg = f"model schema version {version!r} is not supported (expected {MODEL_SCHEMA_VERSION})"
        raise ValueError(msg)
    mix = doc["mixture"]
    mixture = MixtureSpec(
        weights=np.asarray(mix["weights"], dtype=float),
        means=np.asarray(mix["means"], dtype=float),
        scales=np.asarray(mix["scales"], dtype=float),
    )
    theta = Theta(
        family=doc["family"],
        beta=np.asarray(doc["beta"], dtype=float),
        L=np.asarray(doc["L"], dtype=float),
        mixture=mixture,
        tau2=doc.get("tau2"),
    )
    cfg_doc = doc.get("config") or {}
    config = FitConfig(
        family=theta.family,
        n_components=int(cfg_doc.get("n_components", theta.n_components)),
        gh_order=int(cfg_doc.get("gh_order", 25)),
        n_starts=int(cfg_doc.get("n_starts", 3)),
        label=cfg_doc.get("label"),
    )
    fit_doc = doc.get("fit") or {}
    model = FittedModel(
        theta=theta,
        loglik=float(doc["loglik"]),
        converged=bool(doc["converged"]),
        n_params=int(fit_doc.get("n_params", 0)),
        config=config,
        n_clusters=int(fit_doc.get("n_clusters", 0)),
        n_obs=int(fit_doc.get("n_obs", 0)),
        runtime_s=float(fit_doc.get("runtime_s", 0.0)),
        best_start=int(fit_doc.get("best_start", 0)),
    )
    return model, list(doc.get("per_cluster", []))


def write_model(path: str, model: FittedModel, per_cluster: list[dict] | None = None) -> None:
    doc = model_to_doc(model, per_cluster)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_model(path: str) -> tuple[FittedModel, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        return model_from_doc(json.load(fh))


def write_predictions_csv(path: str, predictions: Iterable[Prediction]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "w", "v", "used_fallback"])
        for p in predictions:
            writer.writerow([p.cluster_id, repr(p.w), repr(p.v), int(p.used_fallback)])


def read_predictions_csv(path: str) -> list[dict]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out.append(
                {
                    "cluster": rec["cluster"],
                    "w": float(rec["w"]),
                    "v": float(rec["v"]),
                }
            )
    return out


def write_msep_csv(path: str, result: MsepResult) -> None:
    """Per-target MSEP rows plus a final overall row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["kind", "target", "msep", "mc_se", "n_reps", "bias", "variance"])
        for e in result.entries:
            writer.writerow(
                [
                    result.kind,
                    e.target,
                    repr(e.msep),
                    repr(e.mc_se),
                    e.n_reps,
                    "" if e.bias is None else repr(e.bias),
                    "" if e.variance is None else repr(e.variance),
                ]
            )
        writer.writerow([result.kind, _OVERALL, repr(result.grand_mean), "", "", "", ""])


def read_msep_csv(path: str) -> tuple[dict[str, float], float | None]:
    """Returns ({target: msep}, overall msep or None)."""
    per: dict[str, float] = {}
    overall = None
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            if rec["target"] == _OVERALL:
                overall = float(rec["msep"])
            else:
                per[rec["target"]] = float(rec["msep"])
    return per, overall


def ndjson_line(record: dict) -> str:
    """One canonical ndjson line: sorted keys, no whitespace padding."""
    return json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n"


def write_ndjson(path: str, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(ndjson_line(rec))
