"""Times the jitted kernels against their plain-numpy twins.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--reps 30]

The same comparison is what the GLMM_MISPREDICT_NO_NUMBA env flag
switches at import time; here both paths are called directly so one
process can report the ratio.  Expect the compiled path to win on the
per-cluster loop shapes (many small clusters); the numpy path is the
portable fallback, not a performance target.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from glmm_mispredict import _kernels
from glmm_mispredict.model import FAMILY_CODES
from glmm_mispredict.quadrature import gh_rule
from glmm_mispredict.simlab import DIST_II, Scenario, generate


def _scenario(family: str, m: int, n: int) -> Scenario:
    return Scenario(
        name=f"bench:{family}",
        family=family,
        m=m,
        cluster_size=n,
        beta=(0.0, 1.0),
        covariate_law="uniform:-5:5" if family == "bernoulli" else "uniform:0:1",
        mixture=DIST_II,
        tau2=1.0 if family == "gaussian" else None,
        seed=20260814,
    )


def _best_of(fn, args, reps: int) -> float:
    best = float("inf")
    for _ in range(reps):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_family(family: str, m: int, n: int, reps: int) -> None:
    data = generate(_scenario(family, m, n))
    flat = data.dataset.flat()
    theta = data.scenario.true_theta()
    centers = theta.effective_centers1d()
    scales = theta.effective_sds1d()
    code = FAMILY_CODES[family]

    if family == "gaussian":
        pairs = [
            ("gaussian closed form", _kernels._gaussian_stats_jit, _kernels._gaussian_stats_numpy,
             (flat.y, flat.x, flat.z, flat.offsets, theta.beta, theta.tau2, centers, scales)),
        ]
    else:
        rule = gh_rule(25)
        pairs = [
            (f"{family} adaptive quadrature", _kernels._glmm_stats_jit, _kernels._glmm_stats_numpy,
             (code, flat.y, flat.x, flat.z, flat.offsets, theta.beta, 0.0,
              centers, scales, rule.nodes, rule.modified_log_weights())),
        ]

    for label, jit_fn, np_fn, args in pairs:
        if jit_fn is None:
            print(f"{label:32s}  numba unavailable; numpy only: "
                  f"{1e3 * _best_of(np_fn, args, reps):8.3f} ms")
            continue
        jit_fn(*args)  # compile outside the timer
        t_jit = _best_of(jit_fn, args, reps)
        t_np = _best_of(np_fn, args, reps)
        print(f"{label:32s}  numba {1e3 * t_jit:8.3f} ms   numpy {1e3 * t_np:8.3f} ms   "
              f"speedup x{t_np / t_jit:5.1f}   (m={m}, n_i={n})")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--reps", type=int, default=30, help="timing repetitions (best-of)")
    args = parser.parse_args()
    print(f"numba active in this build: {_kernels.USE_NUMBA}")
    bench_family("gaussian", m=400, n=10, reps=args.reps)
    bench_family("bernoulli", m=200, n=40, reps=args.reps)
    bench_family("poisson", m=400, n=10, reps=args.reps)


if __name__ == "__main__":
    main()
