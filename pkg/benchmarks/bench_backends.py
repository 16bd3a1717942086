"""Timing comparison of the jitted kernels against the numpy fallback.

Run from the repository root:

    python3 benchmarks/bench_backends.py

The active backend for library code is picked at import time from
SUBCON_BACKEND; this script times both variants directly so a single run
covers the comparison.
"""
import argparse
import time

import numpy as np

import subcon
from subcon import _kernels


def time_call(fn, *args, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def make_graph(n_per_block, blocks=5, p_in=0.01, p_out=0.0005, seed=3):
    spec = subcon.SyntheticSpec(blocks=(n_per_block,) * blocks, p_in=p_in,
                                p_out=p_out, feature_dim=4, seed=seed)
    return subcon.generate_sbm(spec)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", type=int, nargs="*",
                        default=[2000, 10000, 40000],
                        help="nodes per block (5 blocks)")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels.backend() != "numba":
        print("numba backend unavailable; timing numpy only")

    print(f"{'M':>8} {'kernel':<10} {'numpy ms':>10} {'numba ms':>10} "
          f"{'speedup':>8}")
    for n in args.sizes:
        g = make_graph(n)
        m = g.num_nodes
        rng = np.random.default_rng(0)
        u0 = rng.uniform(size=m)

        rows = {}
        rows["nad_sweep"] = [time_call(_kernels.nad_sweep_numpy, g.indptr,
                                       g.indices, u0, 0.5, 50,
                                       repeats=args.repeats)]
        rows["ppr_power"] = [time_call(_kernels.ppr_power_numpy, g.indptr,
                                       g.indices, 0, 0.15, 1e-12, 1000,
                                       repeats=args.repeats)]
        if _kernels.backend() == "numba":
            _kernels.nad_sweep(g.indptr, g.indices, u0, 0.5, 1)  # jit warmup
            _kernels.ppr_power(g.indptr, g.indices, 0, 0.15, 1e-12, 2)
            rows["nad_sweep"].append(time_call(
                _kernels.nad_sweep, g.indptr, g.indices, u0, 0.5, 50,
                repeats=args.repeats))
            rows["ppr_power"].append(time_call(
                _kernels.ppr_power, g.indptr, g.indices, 0, 0.15, 1e-12,
                1000, repeats=args.repeats))

        for name, times in rows.items():
            np_ms = 1e3 * times[0]
            if len(times) == 2:
                nb_ms = 1e3 * times[1]
                print(f"{m:>8} {name:<10} {np_ms:>10.2f} {nb_ms:>10.2f} "
                      f"{np_ms / nb_ms:>7.1f}x")
            else:
                print(f"{m:>8} {name:<10} {np_ms:>10.2f} {'-':>10} {'-':>8}")


if __name__ == "__main__":
    main()
