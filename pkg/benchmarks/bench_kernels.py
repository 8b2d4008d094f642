"""Time the compiled and numpy round kernels on the same systems.

    python3 benchmarks/bench_kernels.py [--n 10000 100000] [--repeat 5]

Reports the best wall time of a full cascade per backend and the speed-up, and
checks that both backends produce identical sold totals.
"""
import argparse
import timeit

import numpy as np

from firesale import kernels
from firesale.cascade import run_auxiliary, run_fire_sales
from firesale.ensemble import sample_system, study_calibration
from firesale.model import FiniteSystem, PriceImpact, SalesFunction


def partial_sales_system(n, M=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.pareto(2.0, (n, M)) + 1.0
    c = 0.3 * x.sum(axis=1)
    ell = np.where(rng.random(n) < 0.02, c, 0.0)
    return FiniteSystem(x, c, ell, SalesFunction.power(2.0), PriceImpact.uniform("exponential", M))


def cases(n):
    yield "indicator, 40 assets", sample_system(study_calibration(n=n), seed=1)
    yield "power q=2, 3 assets", partial_sales_system(n)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; timing the numpy backend only")
    print(f"{'system':<22} {'n':>8} {'process':>8} " + " ".join(f"{b:>10}" for b in backends) + "  speed-up")
    for n in args.n:
        for label, sys in cases(n):
            for proc, run in (("real", run_fire_sales), ("aux", run_auxiliary)):
                best, results = {}, {}
                for b in backends:
                    results[b] = run(sys, backend=b)
                    best[b] = min(timeit.repeat(lambda: run(sys, backend=b), number=1, repeat=args.repeat))
                if len(backends) > 1:
                    same = np.array_equal(results["python"].sold_per_n, results["cython"].sold_per_n)
                    ratio = f"{best['python'] / best['cython']:8.2f}x" + ("" if same else "  (totals differ)")
                else:
                    ratio = "       -"
                times = " ".join(f"{best[b] * 1e3:8.2f}ms" for b in backends)
                print(f"{label:<22} {n:>8} {proc:>8} {times}  {ratio}")


if __name__ == "__main__":
    main()
