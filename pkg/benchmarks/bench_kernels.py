"""Compiled vs numpy kernels: raw ``K`` evaluation, batched accumulation, full ``evaluate_H``.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import time

import numpy as np

from fracflow import _backend
from fracflow.curvature import evaluate_H
from fracflow.kernels import FractionalOrder
from fracflow.profiles import make_profile


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    s = 1.25
    pm = rng.normal(scale=2.0, size=200_000)
    pp = rng.normal(scale=2.0, size=200_000)
    yield "kernel_K 2e5", lambda b: _backend.kernel_K(pm, pp, s, backend=b)

    m, n = 64, 4096
    u0 = rng.normal(size=n)
    um = u0 + rng.normal(scale=0.1, size=(m, n))
    up = u0 + rng.normal(scale=0.1, size=(m, n))
    r = np.geomspace(1e-2, 10.0, m)
    c = np.ones(m)

    def rows(b):
        out = np.zeros(n)
        _backend.even_accumulate_rows(out, u0, um, up, r, c, s, backend=b)

    yield "even_accumulate_rows 64x4096", rows

    o = FractionalOrder(0.5, 2)
    u1 = make_profile("cosine", 1, 256, 2.0**-6, amplitude=0.1)
    yield "evaluate_H d=1 n=256", lambda b: evaluate_H(u1, o, workers=1, backend=b)
    o2 = FractionalOrder(0.5, 3)
    u2 = make_profile("cosine", 2, 32, 2.0**-3, amplitude=0.1)
    yield "evaluate_H d=2 n=32^2", lambda b: evaluate_H(u2, o2, workers=1, backend=b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json")
    args = ap.parse_args(argv)
    backends = _backend.available()
    rng = np.random.default_rng(0)
    results = []
    print(f"{'case':32s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in cases(rng):
        row = {"case": name}
        for b in backends:
            fn(b)  # warm-up
            row[b] = best_of(lambda: fn(b), args.repeat)
        line = f"{name:32s}" + "".join(f"{row[b]:12.4f}" for b in backends)
        if "cython" in row:
            row["speedup"] = row["python"] / row["cython"]
            line += f"{row['speedup']:12.1f}x"
        print(line)
        results.append(row)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
