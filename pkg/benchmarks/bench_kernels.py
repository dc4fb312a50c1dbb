"""Timing comparison of the compiled kernels against the numpy fallback.

Run:  python benchmarks/bench_kernels.py
"""
import time

import numpy as np

from ssmkit import kernels
from ssmkit.simulation import IdmPlusParams


def timeit(fn, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    backends = dict(kernels.get_backends())
    if "native" not in backends:
        print("native backend not built; showing pure only")
    rng = np.random.default_rng(0)

    cases = []

    # constant-speed-leader simulation batches
    t_react = rng.uniform(0.2, 3.0, 5000)
    madr = rng.uniform(4.2, 12.7, 5000)
    cases.append(("simulate_ws_batch (5k runs)",
                  lambda mod: mod.simulate_ws_batch(20.0, 2.0, t_react, madr, 0.1),
                  5000, "runs/s"))

    # leader-profile IDM+ simulation batches
    idm = IdmPlusParams().as_tuple()
    knots = np.maximum(18 + np.cumsum(rng.normal(0, 0.4, (2000, 51)), axis=1), 0)
    tr2 = rng.uniform(0.2, 2.5, 2000)
    md2 = rng.uniform(4.2, 12.7, 2000)
    cases.append(("simulate_idm_batch (2k runs)",
                  lambda mod: mod.simulate_idm_batch(knots, 0.1, 23.0, 25.0, tr2,
                                                     md2, idm, 0.1, 60.0),
                  2000, "runs/s"))

    # the adaptive estimator's real shape: many small batches
    def small_batches(mod):
        for k in range(100):
            mod.simulate_idm_batch(knots[k:k + 20], 0.1, 23.0, 25.0,
                                   tr2[k:k + 20], md2[k:k + 20], idm, 0.1, 60.0)

    cases.append(("simulate_idm_batch (100 batches of 20)",
                  small_batches, 2000, "runs/s"))

    # table evaluation and gradients at the field-scale table size
    pts = rng.uniform([0, -3, 0, 1.0], [35, 3, 35, 4.5], (10_129, 4))
    probs = rng.random(10_129)
    binv = np.asarray([0.25, 4.0, 0.25, 0.25])
    queries = rng.uniform([0, -3, 0, 1.0], [35, 3, 35, 4.5], (4000, 4))
    cases.append(("nw_evaluate_many (4k queries, 10,129-point table)",
                  lambda mod: mod.nw_evaluate_many(pts, probs, binv, queries),
                  4000, "queries/s"))
    cases.append(("nw_gradient_many (2k queries)",
                  lambda mod: mod.nw_gradient_many(pts, probs, binv, queries[:2000]),
                  2000, "queries/s"))

    # greedy design-point cover
    scaled = rng.normal(0, 1.5, (20_000, 4))
    cases.append(("greedy_cover (20k points)",
                  lambda mod: mod.greedy_cover(scaled),
                  20_000, "points/s"))

    print(f"{'kernel':<50} " + " ".join(f"{n:>14}" for n in backends) + "   speedup")
    for label, fn, work, unit in cases:
        rates = {}
        for name, mod in backends.items():
            fn(mod)  # warm-up
            rates[name] = work / timeit(lambda: fn(mod))
        cells = " ".join(f"{rates[n]:>11,.0f}/s" for n in backends)
        speedup = (f"{rates['native'] / rates['pure']:7.1f}x"
                   if "native" in rates else "")
        print(f"{label:<50} {cells}   {speedup}")


if __name__ == "__main__":
    main()
