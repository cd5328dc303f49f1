"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from rlpp import _fallback

try:
    from rlpp import _ext
except ImportError:  # extension not built
    _ext = None


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best * 1e3


def cases(rng):
    d, n = 64, 60
    V = rng.uniform(-0.1, 0.1, d)
    W = rng.uniform(-0.1, 0.1, (d, d))
    u = rng.uniform(-0.1, 0.1, d)
    gaps = rng.exponential(0.25, n)
    H, Z = _fallback.rnn_forward(V, W, u, 0.3, gaps)
    coef = rng.normal(size=n + 1)
    uniforms = rng.uniform(size=400)
    times = np.sort(rng.uniform(0, 15, 1800))
    offsets = np.arange(0, 1801, 60, dtype=np.int64)
    hawkes_t = np.sort(rng.uniform(0, 15, 5000))
    return {
        "rnn_forward (d=64, N=60)": lambda k: k.rnn_forward(V, W, u, 0.3, gaps),
        "rnn_backward (d=64, N=60)": lambda k: k.rnn_backward(V, W, u, gaps, H, Z, coef),
        "rnn_rollout (d=64, T=15)": lambda k: k.rnn_rollout(V, W, u, 1.0, 0, uniforms, 15.0, 10000),
        "gauss_block_sums (1800 x 1800)": lambda k: k.gauss_block_sums(times, times, offsets, 0.03, 1),
        "hawkes_excitation (N=5000)": lambda k: k.hawkes_excitation(hawkes_t, 1.0),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        py = _best(lambda: fn(_fallback), args.repeat)
        if _ext is None:
            print(f"{name:34s} {py:10.3f} {'n/a':>10s}")
            continue
        cy = _best(lambda: fn(_ext), args.repeat)
        print(f"{name:34s} {py:10.3f} {cy:10.3f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
