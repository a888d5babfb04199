"""Compare the compiled kernels with the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from roieval._kernels import _fallback

try:
    from roieval._kernels import _ext
except ImportError:  # extension not built
    _ext = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(rng):
    mats = {n: (-rng.uniform(0, 1, (n, n))).tolist() for n in (8, 32, 128)}
    seqs = {n: (rng.integers(0, 50, n).tolist(), rng.integers(0, 50, n).tolist())
            for n in (50, 300)}
    blobs = [rng.bytes(3) for _ in range(20_000)]
    out = [(f"hungarian {n}x{n}", lambda k, m=m: k.solve_min_cost(m)) for n, m in mats.items()]
    out += [(f"lcs {n}x{n}", lambda k, ab=ab: k.lcs_length(*ab)) for n, ab in seqs.items()]
    out.append(("fnv1a64 x20000 trigrams", lambda k: [k.fnv1a64(b) for b in blobs]))
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'python (ms)':>12}{'compiled (ms)':>15}{'speedup':>9}")
    for name, run in cases(rng):
        py = best_of(lambda: run(_fallback), args.repeat) * 1e3
        if _ext is None:
            print(f"{name:<26}{py:>12.2f}{'n/a':>15}{'':>9}")
            continue
        assert run(_ext) == run(_fallback), name
        cx = best_of(lambda: run(_ext), args.repeat) * 1e3
        print(f"{name:<26}{py:>12.2f}{cx:>15.3f}{py / cx:>8.1f}x")


if __name__ == "__main__":
    main()
