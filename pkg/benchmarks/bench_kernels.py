"""Compare the compiled kernel extension against the numpy fallback.

Both implementations are imported directly (bypassing the env-var
selection) so one process can time them side by side.  Each cell reports
the best of `--repeats` timed loops; results are cross-checked before
timing so the table never reports a speedup for wrong answers.

usage: python3 benchmarks/bench_kernels.py [--repeats 5] [--loops 20]
"""

import argparse
import time

import numpy as np

from rollvid.kernels import BACKEND, _numpy_impl

try:
    from rollvid.kernels import _speedups
except ImportError:
    _speedups = None

ATTN_SIZES = [(16, 32), (64, 32), (256, 64), (1024, 64)]
OTSU_SIZES = [256]


def _time(fn, loops, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(loops):
            fn()
        best = min(best, (time.perf_counter() - t0) / loops)
    return best


def attention_case(n, d, rng):
    q = rng.standard_normal((n, d))
    k = rng.standard_normal((n + n // 2, d))  # refs make k/v longer than q
    v = rng.standard_normal((n + n // 2, d))
    return lambda impl: impl.attention(q, k, v)


def otsu_case(bins, rng):
    weights = rng.integers(0, 50, bins).astype(np.float64)
    centers = np.linspace(0.0, 1.0, bins)
    return lambda impl: impl.otsu_split(weights, centers)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--loops", type=int, default=20)
    args = ap.parse_args()

    print(f"default backend for this interpreter: {BACKEND}")
    if _speedups is None:
        print("compiled extension not importable; timing numpy only")

    rng = np.random.default_rng(0)
    cases = [(f"attention {n}x{d}", attention_case(n, d, rng), np.allclose)
             for n, d in ATTN_SIZES]
    cases += [(f"otsu_split {bins} bins", otsu_case(bins, rng),
               lambda a, b: a == b)
              for bins in OTSU_SIZES]

    rows = []
    for case, run, same in cases:
        t_py = _time(lambda: run(_numpy_impl), args.loops, args.repeats)
        if _speedups is not None:
            if not same(run(_numpy_impl), run(_speedups)):
                raise SystemExit(f"{case}: backends disagree")
            t_c = _time(lambda: run(_speedups), args.loops, args.repeats)
        else:
            t_c = None
        rows.append((case, t_py, t_c))

    print(f"\n{'kernel':<22}{'numpy':>12}{'compiled':>12}{'speedup':>10}")
    for case, t_py, t_c in rows:
        if t_c is None:
            print(f"{case:<22}{t_py * 1e6:>10.1f}us{'-':>12}{'-':>10}")
        else:
            print(f"{case:<22}{t_py * 1e6:>10.1f}us{t_c * 1e6:>10.1f}us"
                  f"{t_py / t_c:>9.2f}x")


if __name__ == "__main__":
    main()
