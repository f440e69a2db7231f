"""Compare the compiled threshold-sweep kernel with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--sizes 64 256 512] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from hicome.metrics import THRESHOLDS, _fallback

try:
    from hicome.metrics import _kernels
except ImportError:
    _kernels = None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[64, 256, 512])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernel not built; run `pip install -e .` first")
        return
    rng = np.random.default_rng(0)
    print(f"{'size':>6} {'compiled ms':>12} {'numpy ms':>10} {'speedup':>8}")
    for s in args.sizes:
        pred = rng.random(s * s)
        gt = (rng.random(s * s) < 0.3).astype(np.uint8)
        a = _kernels.threshold_histograms(pred, gt, THRESHOLDS)
        b = _fallback.threshold_histograms(pred, gt, THRESHOLDS)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        t_c = min(timeit.repeat(lambda: _kernels.threshold_histograms(pred, gt, THRESHOLDS),
                                number=1, repeat=args.repeat))
        t_n = min(timeit.repeat(lambda: _fallback.threshold_histograms(pred, gt, THRESHOLDS),
                                number=1, repeat=args.repeat))
        print(f"{s:>6} {1e3 * t_c:>12.3f} {1e3 * t_n:>10.3f} {t_n / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
