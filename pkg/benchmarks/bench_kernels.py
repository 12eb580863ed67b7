"""Compare the compiled and pure-Python kernels on representative inputs.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from stackelberg_ppo import _pykernels

try:
    from stackelberg_ppo import _ckernels
except ImportError:  # pragma: no cover
    _ckernels = None


def gae_args(n_segments=64, seg_len=100, seed=0):
    rng = np.random.default_rng(seed)
    n = n_segments * seg_len
    return (rng.normal(size=n), rng.normal(size=n), rng.normal(size=n_segments),
            np.full(n_segments, seg_len, dtype=np.int64), 0.995, 0.95)


def rollout_args(horizon=200, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=3), 0.1, 0.0, np.array([0.3, -0.2]), 1.2, 0.8, rng.normal(size=horizon),
            0.05, 1e-4, 3.0)


CASES = {
    "gae_segments (64 x 100 steps)": ("gae_segments", gae_args()),
    "chainwalker_rollout (200 steps)": ("chainwalker_rollout", rollout_args()),
}


def bench(fn, args, repeat):
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-7)))
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat)) / number
    return best * 1e6


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    print(f"{'kernel':36s} {'python us':>12s} {'cython us':>12s} {'speedup':>9s}")
    for label, (name, fargs) in CASES.items():
        py = bench(getattr(_pykernels, name), fargs, args.repeat)
        if _ckernels is None:
            print(f"{label:36s} {py:12.1f} {'n/a':>12s} {'n/a':>9s}")
            continue
        cy = bench(getattr(_ckernels, name), fargs, args.repeat)
        print(f"{label:36s} {py:12.1f} {cy:12.1f} {py / cy:8.1f}x")


if __name__ == "__main__":
    main()
