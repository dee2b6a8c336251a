#!/usr/bin/env python3
"""Benchmark the compiled kernels against the pure-Python fallback.

Both backends compute bit-identical results (verified here as a side
effect); the point of the compiled extension is speed on the hot paths:
the fixed-order matmul that dominates training, inference and the pruning
solver, plus the elementwise relu.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import time

import numpy as np

import ensyth
from ensyth import _kernels
from ensyth._kernels import _pykernels

try:
    from ensyth._kernels import _ckernels
except ImportError:
    _ckernels = None


MATMUL_SHAPES = [
    ("layer fwd 32x64 @ 64x2500", (32, 64), (64, 2500)),
    ("admm fit  2000x65 @ 65x32", (2000, 65), (65, 32)),
    ("admm rhs  65x2000 @ 2000x32", (65, 2000), (2000, 32)),
    ("gram      65x2000 @ 2000x65", (65, 2000), (2000, 65)),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _bench_backend(impl, repeats, rng):
    results = {}
    for name, sa, sb in MATMUL_SHAPES:
        a = np.ascontiguousarray(rng.normal(size=sa))
        b = np.ascontiguousarray(rng.normal(size=sb))
        results[name] = (_time(lambda: impl.matmul(a, b), repeats),
                         impl.matmul(a, b))
    big = np.ascontiguousarray(rng.normal(size=(1000, 1000)))
    results["relu 1000x1000"] = (_time(lambda: impl.relu(big), repeats),
                                 impl.relu(big))
    return results


def _bench_forward(repeats):
    """End-to-end forward pass under whichever backend is selected."""
    ds = ensyth.synth_blobs(seed=0, samples_per_class=500, classes=5, dim=64,
                            spread=1.0)
    net = ensyth.ReluNetwork.initialize([64, 32, 5], seed=1)
    x = ds.features
    return _time(lambda: ensyth.predict(net, x), repeats)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per case (best-of is reported)")
    args = parser.parse_args()

    print(f"selected backend at import: {_kernels.BACKEND}")
    rng = np.random.default_rng(0)
    py = _bench_backend(_pykernels, args.repeats, np.random.default_rng(0))

    if _ckernels is None:
        print("compiled kernels not built; showing fallback timings only\n")
        for name, (secs, _) in py.items():
            print(f"{name:30s} python {secs * 1e3:9.2f} ms")
        return

    cc = _bench_backend(_ckernels, args.repeats, np.random.default_rng(0))
    print(f"{'case':30s} {'python':>12s} {'compiled':>12s} {'speedup':>9s}  bits")
    for name in py:
        t_py, out_py = py[name]
        t_cc, out_cc = cc[name]
        identical = out_py.tobytes() == out_cc.tobytes()
        print(f"{name:30s} {t_py * 1e3:9.2f} ms {t_cc * 1e3:9.2f} ms "
              f"{t_py / t_cc:8.1f}x  {'==' if identical else 'MISMATCH'}")

    fwd = _bench_forward(args.repeats)
    print(f"\npredict [64,32,5] on 2500 samples ({_kernels.BACKEND}): "
          f"{fwd * 1e3:.2f} ms")


if __name__ == "__main__":
    main()
