"""Time the compiled and NumPy nearest-neighbour kernels on oversampling-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeats 5]

Shapes mirror the baselines: a minority class queried against itself and a
minority class queried against the whole training split, at 32x32 and 64x64.
"""
import argparse
import statistics
import time

import numpy as np

from tpgan.kernels import _knn_py

try:
    from tpgan.kernels import _knn_cy
except ImportError:
    _knn_cy = None

CASES = (
    ("minority self, 32px", 80, 80, 1024, True),
    ("minority vs split, 32px", 80, 960, 1024, False),
    ("minority self, 64px", 160, 160, 4096, True),
    ("minority vs split, 64px", 160, 1120, 4096, False),
)


def _time(fn, repeats):
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return statistics.median(samples)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--k", type=int, default=5)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(0)
    backends = [("numpy", _knn_py)] + ([("cython", _knn_cy)] if _knn_cy is not None else [])
    if _knn_cy is None:
        print("compiled kernel not built; timing the NumPy fallback only")
    print(f"{'case':<26}" + "".join(f"{name:>12}" for name, _ in backends) + ("     speedup" if _knn_cy else ""))
    for label, nq, nr, dim, self_query in CASES:
        ref = rng.uniform(-1, 1, (nr, dim))
        query = ref[:nq] if self_query else rng.uniform(-1, 1, (nq, dim))
        skip = np.arange(nq) if self_query else None
        results = {}
        for name, mod in backends:
            results[name] = mod.kneighbors(query, ref, args.k, skip)
            timing = _time(lambda: mod.kneighbors(query, ref, args.k, skip), args.repeats)
            results[name + ":t"] = timing
        line = f"{label:<26}" + "".join(f"{results[name + ':t'] * 1e3:>10.2f}ms" for name, _ in backends)
        if _knn_cy is not None:
            assert np.array_equal(results["numpy"], results["cython"]), "backends disagree"
            line += f"{results['numpy:t'] / results['cython:t']:>11.1f}x"
        print(line)

    base = rng.uniform(-1, 1, (10_000, 1024))
    partner = rng.uniform(-1, 1, (10_000, 1024))
    gaps = rng.random(10_000)
    line = f"{'interpolate 10^4 x 1024':<26}"
    for name, mod in backends:
        line += f"{_time(lambda: mod.interpolate(base, partner, gaps), args.repeats) * 1e3:>10.2f}ms"
    print(line)


if __name__ == "__main__":
    main()
