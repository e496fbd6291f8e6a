"""Time the compiled and pure-Python state-space kernels side by side.

    python3 benchmarks/bench_ssm.py --sizes 1000 10000 100000 --repeat 3
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from speedbias import ssm

KERNELS = ("loglik_terms", "smooth")


def best_time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = ["python"] + (["compiled"] if ssm.HAVE_COMPILED else [])
    if not ssm.HAVE_COMPILED:
        print("compiled extension not built; timing the fallback only")
    rng = np.random.default_rng(args.seed)
    lam, eta = np.sqrt(5.0) / 30.0, 0.25

    print(f"{'kernel':<14}{'n':>9}" + "".join(f"{b:>12}" for b in backends) + ("   speedup" if len(backends) == 2 else ""))
    for n in args.sizes:
        t = np.sort(rng.uniform(0, 580, n))
        y = rng.normal(size=n)
        obs = np.ones(n, dtype=np.uint8)
        for kernel in KERNELS:
            times = []
            for b in backends:
                if kernel == "smooth":
                    call = lambda b=b: ssm.smooth(t, y, obs, lam, eta, backend=b)
                else:
                    call = lambda b=b: ssm.loglik_terms(t, y, lam, eta, backend=b)
                times.append(best_time(call, args.repeat))
            row = f"{kernel:<14}{n:>9}" + "".join(f"{s:>11.4f}s" for s in times)
            if len(times) == 2:
                row += f"{times[0] / times[1]:>9.1f}x"
            print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
