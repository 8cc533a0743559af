"""Compiled vs pure-Python level-crossing walk.

    python3 benchmarks/bench_adm.py [--samples N] [--repeat R]

Both backends must return identical events; the script exits non-zero if not.
"""
import argparse
import sys
import timeit

import numpy as np

from memadm import kernels


def make_input(n, rate=1e6):
    t = np.arange(n) / rate
    x = 0.75 * np.sin(2 * np.pi * 1000 * t) * (1 + 0.3 * np.sin(2 * np.pi * 7 * t))
    return x, np.full(n - 1, 0.02)


def walk(backend, x, delta):
    return kernels.adm_walk(x, delta, t0=0.0, dt=1e-6, gain=0.75, dead_time=10e-9,
                            v_track=float(x[0]), backend=backend)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    x, delta = make_input(args.samples)
    backends = ["python"] + (["cython"] if kernels.HAVE_EXTENSION else [])
    results, times = {}, {}
    for b in backends:
        results[b] = walk(b, x, delta)
        times[b] = min(timeit.repeat(lambda: walk(b, x, delta), number=1, repeat=args.repeat))
    n_events = len(results["python"][0])
    print(f"{args.samples} samples, {n_events} events")
    for b in backends:
        print(f"  {b:7s} {times[b] * 1e3:10.2f} ms  {args.samples / times[b] / 1e6:8.2f} Msamples/s")
    if "cython" in results:
        same = all(np.array_equal(a, c) for a, c in zip(results["python"][:2], results["cython"][:2]))
        same = same and results["python"][2:] == results["cython"][2:]
        print(f"  speed-up {times['python'] / times['cython']:.0f}x, identical output: {same}")
        if not same:
            return 1
    else:
        print("  compiled extension unavailable or disabled; only the Python backend was timed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
