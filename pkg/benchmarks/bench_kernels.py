"""Time the compiled flux kernels against the NumPy fallback.

Run with ``python3 benchmarks/bench_kernels.py``; prints one line per kernel
and grid size with the median time of each backend and the speed-up.
"""
import argparse
import statistics
import timeit

import numpy as np

from plaplab import _pykernels

try:
    from plaplab import _ckernels
except ImportError:
    _ckernels = None


def _median_time(fn, repeat: int, number: int) -> float:
    return statistics.median(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--p", type=float, default=3.0)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the NumPy backend is available")
    rng = np.random.default_rng(0)
    cases = [("flux_update_1d", (n,)) for n in (1_000, 100_000)]
    cases += [("flux_update_2d", (n, n)) for n in (64, 256, 1024)]
    cases += [("max_coefficient_2d", (n, n)) for n in (256, 1024)]
    print(f"{'kernel':<20} {'shape':<14} {'numpy [s]':>11} {'cython [s]':>11} {'speed-up':>9}")
    for name, shape in cases:
        u = np.ascontiguousarray(rng.random(shape))
        h = 1.0 / shape[0]
        extra = (h, 0.1 * h * h, args.p, 0.0) if name.startswith("flux") else (h, args.p, 0.0)
        number = max(1, 200_000 // u.size)
        t_np = _median_time(lambda: getattr(_pykernels, name)(u, *extra), args.repeat, number)
        if _ckernels is None:
            print(f"{name:<20} {str(shape):<14} {t_np:11.3e} {'-':>11} {'-':>9}")
            continue
        ref = np.asarray(getattr(_pykernels, name)(u, *extra))
        got = np.asarray(getattr(_ckernels, name)(u, *extra))
        if not np.allclose(ref, got, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_c = _median_time(lambda: getattr(_ckernels, name)(u, *extra), args.repeat, number)
        print(f"{name:<20} {str(shape):<14} {t_np:11.3e} {t_c:11.3e} {t_np / t_c:9.1f}")


if __name__ == "__main__":
    main()
