"""Command-line interface.

Subcommands cover the full workflow: fit a model to long-format CSV
data, predict cluster effects, estimate prediction error by parametric
bootstrap, run the named simulation studies, turn MSEP estimates into
prediction intervals, and run normality diagnostics on the predicted
effects.

Reproducibility contract: every command that draws random numbers takes
--seed, and derived streams are keyed by (seed, purpose, replicate), so
re-running with the same seed and --threads 1 writes byte-identical
outputs.  The only timestamp lives in a meta record that comparisons
should skip.  With --threads above 1 replicate streams are unchanged,
so results remain identical; the flag only adds workers.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import io as fio
from .diagnostics import qq_data, shapiro_wilk, density_curve
from .fit import FitConfig, FitError, fit_ml
from .intervals import prediction_interval
from .msep import HarnessError, bootstrap_msep, simulated_cmsep, simulated_umsep
from .predict import ebp_all
from .simlab import Scenario, builtin_scenarios, get_scenario

__all__ = ["cli_dispatch", "main"]

_PROG = "glmm-mispredict"


def _default_threads() -> int:
    env = os.environ.get("GLMM_MISPREDICT_THREADS", "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=_PROG,
        description="Prediction of cluster random effects under normal or "
        "mixture-of-normals laws, with MSEP estimation and interval tools.",
        epilog="Seeding: --seed is a master seed; each replicate, fit start, "
        "and bootstrap draw uses a child stream keyed by purpose and index.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model to CSV data by maximum likelihood")
    p.add_argument("--data", required=True, help="long-format CSV (cluster,y,x:*,z:*)")
    p.add_argument("--family", required=True, choices=["gaussian", "bernoulli", "poisson"])
    p.add_argument("--components", type=int, default=1, help="mixture components (default 1)")
    p.add_argument("--gh-order", type=int, default=25)
    p.add_argument("--starts", type=int, default=3, help="multi-start count")
    p.add_argument("--intercept", action="store_true", help="prepend intercept columns")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output model JSON path")

    p = sub.add_parser("predict", help="EBPs of cluster effects under a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("msep", help="parametric bootstrap MSEP for a fitted model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--mode", choices=["unconditional", "conditional"], default="unconditional")
    p.add_argument("--bootstrap", type=int, default=200, metavar="B")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("simulate", help="run a catalog or config-file scenario")
    p.add_argument("--scenario", required=True, help="catalog name or scenario JSON path")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--fit-components", default="1,2", help="comma list, e.g. 1,2")
    p.add_argument("--seed", type=int, default=None, help="master seed (default: scenario's)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default 1 "
                   "or GLMM_MISPREDICT_THREADS)")
    p.add_argument("--out", required=True, help="output ndjson path")

    p = sub.add_parser("intervals", help="normal-theory prediction intervals")
    p.add_argument("--predictions", required=True, help="CSV from the predict command")
    p.add_argument("--msep", required=True, help="CSV from the msep command")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", required=True, help="output CSV path")

    p = sub.add_parser("diagnose", help="normality diagnostics for predicted effects")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--intercept", action="store_true")
    p.add_argument("--out-prefix", default="diagnostics", help="prefix for output files")

    sub.add_parser("scenarios", help="list the scenario catalog")
    return parser


def _ebp_rows(model, dataset) -> tuple[list, list[dict]]:
    preds = ebp_all(model, dataset)
    per_cluster = [
        {"cluster_id": p.cluster_id, "n_obs": cl.n, "w": p.w, "v": p.v}
        for p, cl in zip(preds, dataset.clusters)
    ]
    return preds, per_cluster


def _cmd_fit(args) -> int:
    dataset = fio.ingest_csv(args.data, intercept=args.intercept)
    config = FitConfig(
        family=args.family,
        n_components=args.components,
        gh_order=args.gh_order,
        n_starts=args.starts,
    )
    model = fit_ml(dataset, config, rng=np.random.default_rng(args.seed))
    _, per_cluster = _ebp_rows(model, dataset)
    fio.write_model(args.out, model, per_cluster)
    tag = "converged" if model.converged else "NOT converged"
    print(f"fit {config.tag}: loglik {model.loglik:.6f} ({tag}, "
          f"{model.n_params} params, {model.runtime_s:.2f}s) -> {args.out}")
    return 0


def _cmd_predict(args) -> int:
    model, _ = fio.read_model(args.model)
    dataset = fio.ingest_csv(args.data, intercept=args.intercept)
    preds, _ = _ebp_rows(model, dataset)
    fio.write_predictions_csv(args.out, preds)
    print(f"predicted {len(preds)} clusters -> {args.out}")
    return 0


def _cmd_msep(args) -> int:
    model, _ = fio.read_model(args.model)
    dataset = fio.ingest_csv(args.data, intercept=args.intercept)
    result = bootstrap_msep(model, dataset, B=args.bootstrap, mode=args.mode, rng=args.seed)
    fio.write_msep_csv(args.out, result)
    print(f"{result.kind}: grand mean {result.grand_mean:.6g} "
          f"({result.n_failed} of {args.bootstrap} replicates dropped) -> {args.out}")
    if result.caveat:
        print(f"note: {result.caveat}", file=sys.stderr)
    return 0


def _load_scenario(spec: str) -> Scenario:
    if spec.endswith(".json") or os.path.sep in spec:
        with open(spec, encoding="utf-8") as fh:
            return Scenario.from_dict(json.load(fh))
    return get_scenario(spec)


def _cmd_simulate(args) -> int:
    scenario = _load_scenario(args.scenario)
    try:
        counts = [int(tok) for tok in args.fit_components.split(",") if tok.strip()]
    except ValueError:
        print(f"error: --fit-components must be a comma list of ints, "
              f"got {args.fit_components!r}", file=sys.stderr)
        return 2
    if not counts:
        print("error: --fit-components is empty", file=sys.stderr)
        return 2
    configs = tuple(FitConfig(family=scenario.family, n_components=c) for c in counts)
    seed = scenario.seed if args.seed is None else args.seed
    threads = _default_threads() if args.threads is None else max(1, args.threads)

    records: list[dict] = [
        {
            "meta": {
                "scenario": scenario.name,
                "reps": args.reps,
                "seed": seed,
                "threads": threads,
                "conditional": scenario.conditional,
                "timestamp": datetime.now(timezone.utc).isoformat(),
            }
        }
    ]
    if scenario.conditional:
        study = simulated_cmsep(scenario, configs, reps=args.reps, rng=seed, threads=threads)
        for tag, result in study.by_config.items():
            for i, e in enumerate(result.entries):
                records.append(
                    {
                        "config": tag,
                        "cluster": e.target,
                        "u": study.u[i],
                        "msep": e.msep,
                        "bias": e.bias,
                        "variance": e.variance,
                        "mc_se": e.mc_se,
                    }
                )
            records.append(
                {
                    "config": tag,
                    "grand_mean": result.grand_mean,
                    "n_failed": result.n_failed,
                    "summary": True,
                }
            )
    else:
        study = simulated_umsep(scenario, configs, reps=args.reps, rng=seed, threads=threads)
        records.extend(study.records)
        for e in study.results:
            records.append(
                {
                    "config": e.target,
                    "umsep_mean": e.msep,
                    "mc_se": e.mc_se,
                    "n_reps": e.n_reps,
                    "summary": True,
                }
            )
    fio.write_ndjson(args.out, records)
    print(f"{scenario.name}: {args.reps} reps x {len(configs)} configs -> {args.out}")
    return 0


def _cmd_intervals(args) -> int:
    preds = fio.read_predictions_csv(args.predictions)
    per_target, overall = fio.read_msep_csv(args.msep)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster", "w", "msep", "lo", "hi", "alpha"])
        for rec in preds:
            msep = per_target.get(rec["cluster"], overall)
            if msep is None:
                print(f"error: no MSEP value for cluster {rec['cluster']!r} "
                      "and no overall row", file=sys.stderr)
                return 1
            lo, hi = prediction_interval(rec["w"], msep, args.alpha)
            writer.writerow([rec["cluster"], repr(rec["w"]), repr(msep),
                             repr(lo), repr(hi), repr(args.alpha)])
    print(f"intervals for {len(preds)} clusters at alpha {args.alpha} -> {args.out}")
    return 0


def _cmd_diagnose(args) -> int:
    model, _ = fio.read_model(args.model)
    dataset = fio.ingest_csv(args.data, intercept=args.intercept)
    preds, _ = _ebp_rows(model, dataset)
    w = np.array([p.w for p in preds])

    theoretical, ordered = qq_data(w)
    qq_path = f"{args.out_prefix}_qq.csv"
    with open(qq_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["theoretical", "observed"])
        for t, o in zip(theoretical, ordered):
            writer.writerow([repr(float(t)), repr(float(o))])

    sw_path = f"{args.out_prefix}_shapiro.json"
    try:
        sw = shapiro_wilk(w)
        doc = {
            "statistic": sw.statistic,
            "p_value": sw.p_value,
            "n": sw.n,
            "rejects_normality_at_5pct": sw.rejects_normality(0.05),
        }
        verdict = ("evidence against normality"
                   if doc["rejects_normality_at_5pct"] else "no evidence against normality")
    except ValueError as exc:
        doc = {"error": str(exc), "n": int(w.size)}
        verdict = f"test unavailable ({exc})"
    with open(sw_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    lo, hi = float(w.min()), float(w.max())
    pad = 0.25 * max(hi - lo, 1.0)
    grid = np.linspace(lo - pad, hi + pad, 401)
    dens = density_curve(model.theta, grid)
    dens_path = f"{args.out_prefix}_density.csv"
    with open(dens_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "density"])
        for g, d in zip(grid, dens):
            writer.writerow([repr(float(g)), repr(float(d))])

    print(f"diagnostics on {w.size} predicted effects: {verdict}")
    print(f"wrote {qq_path}, {sw_path}, {dens_path}")
    return 0


def _cmd_scenarios(_args) -> int:
    cat = builtin_scenarios()
    for name in sorted(cat):
        s = cat[name]
        cs = s.cluster_size
        size = f"n={cs}" if isinstance(cs, int) else f"n in {cs}"
        kind = "conditional" if s.conditional else "unconditional"
        print(f"{name:40s} {s.family:10s} m={s.m:<5d} {size:12s} {kind}")
    print(f"({len(cat)} scenarios)")
    return 0


_HANDLERS = {
    "fit": _cmd_fit,
    "predict": _cmd_predict,
    "msep": _cmd_msep,
    "simulate": _cmd_simulate,
    "intervals": _cmd_intervals,
    "diagnose": _cmd_diagnose,
    "scenarios": _cmd_scenarios,
}


def cli_dispatch(argv: list[str] | None = None) -> int:
    """Parses argv and runs one subcommand.

    Returns 0 on success, 2 on usage errors (argparse convention), and 1
    on computation or data errors.
    """
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handler = _HANDLERS[args.command]
    try:
        return handler(args)
    except (fio.IngestError, FitError, HarnessError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        # KeyError's str() is the repr of its argument; unwrap it.
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
