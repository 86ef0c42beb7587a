"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from hcgas import _fallback, rng
from hcgas.hierarchy import DiskRegion
from hcgas.partition import table_for

try:
    from hcgas import _kernels
except ImportError:
    _kernels = None


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def cases(quick):
    n = 256 if quick else 1024
    reps = 200 if quick else 2000
    fam = table_for(1.0, n).family
    tables = fam.tables
    rk = rng.replica_keys(1, 0, reps)
    D = DiskRegion.scaled(n, (0.5, 0.5), 4.0)
    zeros = np.zeros(reps, dtype=np.uint64)
    counts = np.full(reps, n, dtype=np.int64)
    levels = np.zeros(reps, dtype=np.int64)
    keys = rng.node_keys(rk, 0, 0, 0)
    g = np.ascontiguousarray(table_for(1.0, 64).logZ[:65])
    steps = 20_000 if quick else 200_000
    gen = np.random.default_rng(0)
    pts = gen.random((16, 2))
    idx = gen.integers(0, 16, steps).astype(np.int64)
    ux, uy, ua = gen.random(steps), gen.random(steps), gen.random(steps)
    return {
        f"split_draw x{reps}": lambda k: k.split_draw(counts, keys, *tables),
        f"sample_tree n={n}": lambda k: k.sample_tree(int(rk[0]), n, *tables, 64, 0, 0, 0),
        f"disk_counts n={n} x{reps}": lambda k: k.disk_counts(
            rk, counts, levels, zeros, zeros, *tables, 64, D.center[0], D.center[1], D.radius),
        "composition_lse n=64": lambda k: k.composition_lse(g, 64),
        f"mcmc_chain {steps} steps": lambda k: k.mcmc_chain(pts.copy(), 1.0, idx, ux, uy, ua,
                                                           0, 10),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--quick", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; only the fallback can run")
    print(f"{'kernel':32s} {'compiled s':>11s} {'python s':>11s} {'speedup':>8s}")
    for name, fn in cases(args.quick).items():
        tp = best_of(lambda: fn(_fallback), 1)
        tc = best_of(lambda: fn(_kernels), args.repeat) if _kernels is not None else float("nan")
        print(f"{name:32s} {tc:11.4f} {tp:11.4f} {tp / tc:8.1f}")


if __name__ == "__main__":
    main()
