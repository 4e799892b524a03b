"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--quick] [--repeat N]

Each kernel runs on identical inputs under both backends; outputs are
compared before anything is timed, so a speedup never hides a mismatch.
"""

from __future__ import annotations

import argparse
import random
import sys
import time

import numpy as np

from sovereign_edge.kernels import compiled_backend, python_backend
from sovereign_edge.threatgraph import ALWAYS, random_institutional_graph


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return len(a) == len(b) and all(same(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return np.array_equal(a, b)
    return a == b


def cases(quick: bool):
    n = 60 if quick else 200
    g = random_institutional_graph(n, random.Random(1))
    indptr, indices = g.csr()
    seeds = np.array([0], dtype=np.int64)
    small = random_institutional_graph(11, random.Random(2), mean_out_degree=4.0)
    batch = np.random.default_rng(3).integers(0, 64, size=(2_000 if quick else 50_000, 6),
                                              dtype=np.uint64)
    for i in range(6):
        batch[:, i] &= ~np.uint64(1 << i)
    return [
        (f"reach_closure n={n}", lambda k: k.reach_closure(indptr, indices, seeds)),
        (f"worm_spread topological n={n} p=0.5",
         lambda k: k.worm_spread(indptr, indices, seeds, 0, ALWAYS // 2, 8, 42, 10**6)),
        (f"worm_spread scanning n={n} p=1.0",
         lambda k: k.worm_spread(indptr, indices, seeds, 1, ALWAYS, 8, 42, 10**6)),
        ("simple_paths n=11", lambda k: k.simple_paths(small.bitmasks(), 0, 10, 1 << 62)),
        (f"path_census {len(batch)} graphs n=6", lambda k: k.path_census(batch, 0, 5)),
    ]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="small inputs, for smoke runs")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if compiled_backend is None:
        print("compiled kernels not built; nothing to compare", file=sys.stderr)
        return 1
    print(f"{'kernel':<40} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for name, run in cases(args.quick):
        if not same(run(python_backend), run(compiled_backend)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        tp = best_of(lambda: run(python_backend), args.repeat)
        tc = best_of(lambda: run(compiled_backend), args.repeat)
        print(f"{name:<40} {tp * 1e3:>8.2f}ms {tc * 1e3:>8.2f}ms {tp / tc:>7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
