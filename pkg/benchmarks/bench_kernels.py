"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel is run on both backends with identical inputs; the script
reports the best wall time per backend, the speedup, and whether the two
outputs agree (exactly for Hungarian and k-NN, to 1e-12 for Sinkhorn).
"""
import argparse
import json
import sys
import time

import numpy as np

from mcens import _kernels


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _cases(rng):
    n = 200
    cost = rng.random((n, n))
    yield "hungarian n=200", "hungarian", (cost,), lambda a, b: np.array_equal(a, b)

    m = 512
    X = rng.standard_normal((m, 32))
    Y = rng.standard_normal((m, 32))
    C = np.sqrt(((X[:, None] - Y[None]) ** 2).sum(-1))
    K = np.exp(-(C / C.max()) / 0.05)
    a = np.full(m, 1.0 / m)

    def same_scaling(p, q):
        return p[2] == q[2] and all(np.allclose(x, y, rtol=1e-12, atol=0) for x, y in zip(p[:2], q[:2]))

    yield "sinkhorn n=512 x100", "sinkhorn_scaling", (K, a, a, 100), same_scaling

    train = rng.standard_normal((1000, 32))
    test = rng.standard_normal((300, 32))
    yield "knn 300x1000 d=32 k=5", "kth_neighbor_distance", (test, train, 5), lambda a, b: np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="also write results to this file")
    args = ap.parse_args(argv)
    try:
        _kernels.get("hungarian", "cython")
    except ImportError:
        print("compiled extension not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<24}{'cython s':>12}{'python s':>12}{'speedup':>10}  agree")
    for label, name, inputs, agree in _cases(rng):
        tc, oc = _best(lambda: _kernels.get(name, "cython")(*inputs), args.repeat)
        tp, op = _best(lambda: _kernels.get(name, "python")(*inputs), args.repeat)
        ok = bool(agree(oc, op))
        rows.append({"kernel": label, "cython_s": tc, "python_s": tp, "speedup": tp / tc, "agree": ok})
        print(f"{label:<24}{tc:>12.4f}{tp:>12.4f}{tp / tc:>9.1f}x  {ok}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(rows, f, indent=2)
    return 0 if all(r["agree"] for r in rows) else 2


if __name__ == "__main__":
    sys.exit(main())
