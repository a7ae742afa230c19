"""Compiled vs pure-Python kernels: timings and bit-identity.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--solve]

Each kernel is timed on shapes met during training (a batch of 256 paths,
dimensions 10 and 100). ``--solve`` additionally times one short solve with
each backend in a subprocess, since the backend is fixed at import.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from deepsplit import kernels

SOLVE_SNIPPET = """
import time
from deepsplit import kernels
from deepsplit.problems import build_preset
from deepsplit.sde import make_grid
from deepsplit.training import solve
p = build_preset("allen-cahn", M=60)
t = time.perf_counter()
r = solve(p.problem, make_grid(p.T, p.N), p.schedule, p.arch, seed=0, truncate_paths=True)
print(kernels.BACKEND, time.perf_counter() - t, repr(float(r.evaluate(p.N, p.start_point[None])[0])))
"""


def cases():
    rng = np.random.default_rng(0)
    keys = kernels.get_backend("python").derive_keys(np.uint64(12345), 256, 0)
    for d in (10, 100):
        width = d + 10
        x = rng.standard_normal((256, width))
        wt = rng.standard_normal((width, width))
        b = rng.standard_normal(width)
        yield f"gaussian_block 256 x {20 * d}", "gaussian_block", (keys, 0, 20 * d)
        yield f"uniform_block 256 x {d}", "uniform_block", (keys, 1 << 62, d)
        yield f"dense_ordered 256 x {width} x {width}", "dense_ordered", (x, wt, b)
    yield "derive_keys 4096", "derive_keys", (np.uint64(99), 4096, 0)


def bench(repeat: int):
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the python backend is available")
    header = f"{'kernel':<34}" + "".join(f"{b + ' (ms)':>16}" for b in backends) + f"{'speedup':>10}  same bits"
    print(header)
    print("-" * len(header))
    for label, name, args in cases():
        times, outputs = [], []
        for backend in backends:
            fn = getattr(kernels.get_backend(backend), name)
            outputs.append(fn(*args))
            number = 3 if backend == "python" else 20
            best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number
            times.append(best * 1e3)
        same = all(np.array_equal(outputs[0], o) for o in outputs[1:])
        speed = f"{times[-1] / times[0]:>9.1f}x" if len(times) == 2 else f"{'-':>10}"
        print(f"{label:<34}" + "".join(f"{t:>16.3f}" for t in times) + f"{speed}  {same}")


def bench_solve():
    print("\nshort solve (allen-cahn d=10, N=10, M=60)")
    for pure in ("0", "1"):
        env = dict(os.environ, DEEPSPLIT_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:<9} {float(out[1]):8.2f} s   value {out[2]}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--solve", action="store_true", help="also time a short solve per backend")
    args = parser.parse_args(argv)
    bench(args.repeat)
    if args.solve:
        bench_solve()


if __name__ == "__main__":
    main()
