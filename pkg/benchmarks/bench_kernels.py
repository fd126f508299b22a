"""Compare the numba and numpy paths of the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import time

import numpy as np

from bcsum import _kernels


def timeit(fn, repeat):
    fn()  # warm-up / compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    clip, length, batch_heads = 16, 128, 32
    x = rng.normal(size=(batch_heads, length, 2 * clip + 1)).astype(np.float32)
    idx = np.clip(np.arange(length)[None] - np.arange(length)[:, None], -clip, clip) + clip
    w = rng.random((batch_heads, length, length)).astype(np.float32)
    a = rng.integers(0, 50, size=400)
    b = rng.integers(0, 50, size=400)
    cases = {
        "gather_last (32x128x33 -> 128)": lambda impl: impl.gather_last(x, idx),
        "scatter_last (32x128x128 -> 33)": lambda impl: impl.scatter_last(w, idx, 2 * clip + 1),
        "lcs_length (400 x 400)": lambda impl: impl.lcs_length(a, b),
    }
    impls = {"numpy": _kernels.numpy_impl}
    if _kernels.numba_impl is not None:
        impls["numba"] = _kernels.numba_impl
    print(f"{'kernel':36s}" + "".join(f"{n:>12s}" for n in impls))
    for name, fn in cases.items():
        row = [timeit(lambda: fn(impl), args.repeat) for impl in impls.values()]
        print(f"{name:36s}" + "".join(f"{t * 1e3:10.3f}ms" for t in row))


if __name__ == "__main__":
    main()
