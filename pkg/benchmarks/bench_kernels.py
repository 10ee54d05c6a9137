"""Compiled vs numpy kernels on a disk-sized boundary.

    python benchmarks/bench_kernels.py [--segments 64 128 256] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from msmsim import kernels
from msmsim.kernels import _fallback


def polygon(n, r=0.3):
    th = 2 * np.pi * np.arange(n + 1) / n
    p = r * np.column_stack([np.cos(th), np.sin(th)])
    a, b = p[:-1], p[1:]
    return a[:, 0].copy(), a[:, 1].copy(), b[:, 0].copy(), b[:, 1].copy()


def bench(impl, n, nq, repeat):
    ax, ay, bx, by = polygon(n)
    px, py = 0.5 * (ax + bx), 0.5 * (ay + by)
    t_col = min(timeit.repeat(lambda: impl.segment_log_integrals(px, py, ax, ay, bx, by),
                              number=1, repeat=repeat))
    t_gal = min(timeit.repeat(lambda: impl.galerkin_log_matrix(ax, ay, bx, by, nq),
                              number=1, repeat=repeat))
    return t_col, t_gal


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--segments", type=int, nargs="+", default=[64, 128, 256])
    ap.add_argument("--nq", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        print("compiled extension not built; only the numpy kernels are timed")
    impls = [("numpy", _fallback)]
    if kernels.BACKEND == "compiled":
        impls.append(("compiled", kernels._impl))
    print(f"{'n':>5} {'backend':>9} {'collocation [ms]':>17} {'galerkin [ms]':>14}")
    base = {}
    for n in args.segments:
        for name, impl in impls:
            tc, tg = bench(impl, n, args.nq, args.repeat)
            line = f"{n:5d} {name:>9} {1e3 * tc:17.3f} {1e3 * tg:14.3f}"
            if name == "numpy":
                base[n] = (tc, tg)
            else:
                line += f"   speedup {base[n][0] / tc:.1f}x / {base[n][1] / tg:.1f}x"
            print(line)


if __name__ == "__main__":
    main()
