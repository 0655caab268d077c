"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--size small|medium]

Prints one row per kernel: best-of-N wall time for each backend, the
speed-up, and whether the two outputs are identical.
"""

from __future__ import annotations

import argparse
import sys
import timeit

import numpy as np

from spadsr.kernels import compiled_backend, python_backend
from spadsr.simulator import irf_kernel

SIZES = {"small": (64 * 32, 16, 256), "medium": (256 * 128, 16, 1024)}


def cases(n_pix, t, img):
    rng = np.random.default_rng(0)
    lam = rng.uniform(0, 30, n_pix * t)
    cube = rng.poisson(3.0, (n_pix, t)).astype(np.float64)
    cube[np.arange(n_pix), rng.integers(0, t, n_pix)] += 40
    b = np.median(cube, axis=1)
    peaks = np.argmax(cube, axis=1).astype(np.int64) + 1
    kern = irf_kernel(0.5714)
    image = rng.random((img, img // 2))
    return {
        "poisson_sample": lambda m: m.poisson_sample(lam, 1),
        "argmax_peaks": lambda m: m.argmax_peaks(cube),
        "matched_filter_peaks": lambda m: m.matched_filter_peaks(cube, kern),
        "center_of_mass": lambda m: m.center_of_mass(cube, b, peaks),
        "second_peaks": lambda m: m.second_peaks(cube, b, peaks, 12.0),
        "box_sum": lambda m: m.box_sum(image, 8),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--size", choices=sorted(SIZES), default="medium")
    args = ap.parse_args(argv)
    if compiled_backend is None:
        print("compiled extension not available; build with `pip install -e .`", file=sys.stderr)
        return 1
    print(f"{'kernel':<22}{'numpy ms':>10}{'cython ms':>11}{'speed-up':>10}  identical")
    for name, fn in cases(*SIZES[args.size]).items():
        tp = min(timeit.repeat(lambda: fn(python_backend), number=1, repeat=args.repeat))
        tc = min(timeit.repeat(lambda: fn(compiled_backend), number=1, repeat=args.repeat))
        ok = same(fn(python_backend), fn(compiled_backend))
        print(f"{name:<22}{tp * 1e3:>10.2f}{tc * 1e3:>11.2f}{tp / tc:>9.1f}x  {ok}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
