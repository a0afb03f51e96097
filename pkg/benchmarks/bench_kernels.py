"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from privrep import kernels
from privrep.jl import head_grid


def _best(fn, args, repeat):
    fn(*args)  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases():
    rng = np.random.default_rng(0)
    n, b, d, k = 20000, 1, 50, 2
    U = np.linalg.qr(rng.standard_normal((d, k)))[0]
    yield ("client_round n=20000 d=50 k=2 b=1", "client_round",
           (U, rng.standard_normal((n, b, d)), rng.standard_normal((n, b)),
            rng.standard_normal((n, b, d)), rng.standard_normal((n, b))))
    yield ("init_accumulate n=2000 m=10 d=50", "init_accumulate",
           (rng.standard_normal((2000, 10, 50)), rng.standard_normal((2000, 10)), 5.0))
    yield ("margin_1d cover=64 n=50 m=40", "margin_1d",
           (rng.standard_normal((64, 50, 40)), 0.3, 1.0))
    yield ("margin_grid cover=32 n=50 m=40 k=2 grid=441", "margin_grid",
           (rng.standard_normal((32, 50, 40, 2)), head_grid(1.0, 2, 21), 0.3))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':48s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for label, name, inputs in cases():
        t_np = _best(getattr(kernels, f"_{name}_np"), inputs, args.repeat)
        t_nb = _best(getattr(kernels, f"_{name}_nb"), inputs, args.repeat)
        print(f"{label:48s} {t_np * 1e3:10.2f} {t_nb * 1e3:10.2f} {t_np / t_nb:7.1f}x")


if __name__ == "__main__":
    main()
