"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the per-call time of each backend and the
speed-up.  Exits with status 1 if the extension is not built.
"""
import argparse
import sys
import timeit

import numpy as np

from dcil import _kernels_py as py

try:
    from dcil import _kernels as cy
except ImportError:
    cy = None

RECTS = np.array([[0.0, 1.95, 4.5, 2.05], [1.5, 3.95, 6.0, 4.05]])
BOUNDS = np.array([0.0, 0.0, 6.0, 6.0])


def cases():
    rng = np.random.default_rng(0)
    pts = rng.random((5000, 2)) * 6
    x64 = rng.standard_normal((128, 64))
    w = rng.standard_normal((64, 64))
    b = rng.standard_normal(64)
    dz = rng.standard_normal((128, 64))
    h = np.maximum(x64, 0.0)
    p = rng.standard_normal(20_000)
    g = rng.standard_normal(20_000)

    def adam(mod):
        m, v, q = np.zeros_like(p), np.zeros_like(p), p.copy()
        return lambda: mod.adam_update(q, g, m, v, 1e-3, 0.9, 0.999, 1e-8)

    def polyak(mod):
        t = p.copy()
        return lambda: mod.polyak(t, g, 0.005)

    def backward(mod):
        gw, gb = np.zeros_like(w), np.zeros_like(b)
        return lambda: mod.dense_backward(h, w, dz, gw, gb, True)

    return {
        "wrap_angle": lambda mod: lambda: mod.wrap_angle(7.5),
        "dubins_step": lambda mod: lambda: mod.dubins_step(1.0, 1.9, 0.7, 0.3, 0.5, 0.1, 1.0,
                                                           RECTS, BOUNDS),
        "propagate(10)": lambda mod: lambda: mod.propagate(0.5, 1.0, 0.0, 0.2, 10, 0.5, 0.1, 1.0,
                                                           RECTS, BOUNDS, 5.5, 5.0, 0.2),
        "nearest_index(5000)": lambda mod: lambda: mod.nearest_index(pts, 5000, 3.0, 3.0),
        "dense_forward(128x64x64)": lambda mod: lambda: mod.dense_forward(x64, w, b, True),
        "dense_backward(128x64x64)": backward,
        "adam_update(20000)": adam,
        "polyak(20000)": polyak,
    }


def per_call(fn, repeat):
    timer = timeit.Timer(fn)
    n, _ = timer.autorange()
    return min(timer.repeat(repeat, n)) / n


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if cy is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`")
        return 1
    print(f"{'kernel':<28}{'python':>12}{'cython':>12}{'speed-up':>10}")
    for name, make in cases().items():
        tp = per_call(make(py), args.repeat)
        tc = per_call(make(cy), args.repeat)
        print(f"{name:<28}{tp * 1e6:>10.2f}us{tc * 1e6:>10.2f}us{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
