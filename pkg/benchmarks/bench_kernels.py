"""Compare the compiled and pure-Python kernels on the hot paths.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one row per case with the best wall time of each backend and the
speed-up, after checking that both return the same numbers.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from expsig import _sigkernel_py

try:
    from expsig import _sigkernel as compiled
except ImportError:  # extension not built
    compiled = None


def cases(rng):
    for B, N, d, L in [(16, 50, 2, 3), (16, 100, 3, 4), (64, 50, 2, 5)]:
        incr = np.ascontiguousarray(rng.normal(scale=0.1, size=(B, N - 1, d)))
        yield f"sig_forward    B={B} N={N} d={d} L={L}", "sig_forward", (incr, L)
        size = sum(d**n for n in range(L + 1))
        grad = np.ascontiguousarray(rng.normal(size=(B, size)))
        yield f"sig_backward   B={B} N={N} d={d} L={L}", "sig_backward", (incr, L, grad)
    level_sq = np.ascontiguousarray(rng.uniform(0.5, 5.0, size=(256, 4)))
    target = 1.0 + rng.uniform(1.0, 3.0, size=256)
    yield "solve_dilation B=256 L=4", "solve_dilation", (level_sq, target, 1e-12, 200)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return
    rng = np.random.default_rng(0)
    print(f"{'case':<36} {'cython ms':>10} {'python ms':>10} {'speed-up':>9}")
    for label, name, call_args in cases(rng):
        fc, fp = getattr(compiled, name), getattr(_sigkernel_py, name)
        rc, rp = fc(*call_args), fp(*call_args)
        for a, b in zip(rc if isinstance(rc, tuple) else (rc,), rp if isinstance(rp, tuple) else (rp,)):
            np.testing.assert_allclose(np.asarray(a, dtype=float), np.asarray(b, dtype=float),
                                       rtol=1e-9, atol=1e-11)
        tc = min(timeit.repeat(lambda: fc(*call_args), number=1, repeat=args.repeat))
        tp = min(timeit.repeat(lambda: fp(*call_args), number=1, repeat=args.repeat))
        print(f"{label:<36} {1e3 * tc:>10.3f} {1e3 * tp:>10.3f} {tp / tc:>8.1f}x")


if __name__ == "__main__":
    main()
