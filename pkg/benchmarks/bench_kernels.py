"""Time the compiled kernels against the numpy reference.

Usage: python3 benchmarks/bench_kernels.py [--cells N] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from balred import _kernels_py

try:
    from balred import _kernels
except ImportError:  # extension not built
    _kernels = None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--cells", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(1)
    n = args.cells
    J = rng.normal(size=(n * n, 5, 5))
    face = [np.ascontiguousarray(rng.normal(size=(5, n, n + 1))) for _ in range(4)]
    speed = [np.ascontiguousarray(rng.random((n, n + 1))) for _ in range(2)]
    cases = {
        "spectral_radius": lambda m: m.spectral_radius(J, 20),
        "rusanov_divergence": lambda m: m.rusanov_divergence(*face, *speed, 1.0),
    }
    print(f"{'kernel':<20} {'numpy [ms]':>12} {'cython [ms]':>12} {'speedup':>8} {'max |diff|':>11}")
    for name, call in cases.items():
        t_py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeat))
        if _kernels is None:
            print(f"{name:<20} {1e3 * t_py:12.2f} {'n/a':>12}")
            continue
        t_c = min(timeit.repeat(lambda: call(_kernels), number=1, repeat=args.repeat))
        diff = float(np.max(np.abs(call(_kernels) - call(_kernels_py))))
        print(f"{name:<20} {1e3 * t_py:12.2f} {1e3 * t_c:12.2f} {t_py / t_c:8.1f} {diff:11.2e}")


if __name__ == "__main__":
    main()
