"""Compiled vs pure-Python transport simplex on random square problems.

    python3 benchmarks/bench_transport.py [--sizes 10 50 100 200] [--repeat 3]

Both kernels must agree on every optimum; the table reports the best of
--repeat wall-clock times per size.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from mspmdp import _transport


def problem(rng, n):
    X, Y = rng.uniform(-1, 1, (n, 2)), rng.uniform(-1, 1, (n, 2))
    C = np.abs(X[:, None, :] - Y[None, :, :]).max(axis=-1)
    return rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n)), C


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[10, 50, 100, 200])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    backends = _transport.available_backends()
    if "compiled" not in backends:
        print("compiled kernel not built; timing the Python kernel only")
    rng = np.random.default_rng(args.seed)
    print(f"{'atoms':>6} " + " ".join(f"{b + ' [s]':>14}" for b in backends) + f" {'speedup':>8}")
    for n in args.sizes:
        a, b, C = problem(rng, n)
        times, vals = {}, {}
        for be in backends:
            times[be], vals[be] = best_time(lambda: _transport.transport(a, b, C, backend=be), args.repeat)
        if len(vals) == 2 and abs(vals["python"] - vals["compiled"]) > 1e-9:
            raise SystemExit(f"kernels disagree at n={n}: {vals}")
        speed = times["python"] / times["compiled"] if "compiled" in times else float("nan")
        print(f"{n:>6} " + " ".join(f"{times[be]:>14.4f}" for be in backends) + f" {speed:>8.1f}")


if __name__ == "__main__":
    main()
