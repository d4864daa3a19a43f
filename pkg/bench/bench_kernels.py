#!/usr/bin/env python3
"""Time the compiled solver kernels against the pure-numpy reference backend.

Runs both implementations of the two hot kernels (normal-equation
accumulation and the stacked-frame cotangent accumulation) over a few
problem sizes, verifies they agree to near machine precision, and prints
per-kernel timings with the speedup.

Usage:
    python3 bench/bench_kernels.py [--repeats N]

Note the package picks its backend at import time; this script bypasses the
dispatch and calls both modules directly, so it works regardless of the
``M2BM_KERNEL_BACKEND`` setting.
"""

import argparse
import time

import numpy as np

from m2bm.kernels import _reference

try:
    from m2bm.kernels import _fcpkern
except ImportError:  # pragma: no cover - depends on the build
    _fcpkern = None

# (frames, frequency bins, filter taps): small training scene, the tuned
# tap count at benchmark scale, and a full-window speech-scale instance
SIZES = [(128, 33, 4), (256, 129, 8), (512, 257, 21)]


def make_inputs(rng, num_frames, num_bins, num_taps):
    def crandn(shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    stacked = crandn((num_frames, num_bins, num_taps))
    target = crandn((num_frames, num_bins))
    inv_w = 1.0 / (0.1 + rng.random((num_frames, num_bins)))
    mat = crandn((num_bins, num_taps, num_taps))
    mat = mat + mat.conj().transpose(0, 2, 1)
    vec = crandn((num_bins, num_taps))
    return stacked, target, inv_w, mat, vec


def best_of(fn, args, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def rel_err(a, b):
    if isinstance(a, tuple):
        return max(rel_err(x, y) for x, y in zip(a, b))
    scale = max(np.max(np.abs(b)), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per kernel (best-of)")
    args = parser.parse_args()

    if _fcpkern is None:
        print("compiled backend not available; timing the numpy reference only")

    rng = np.random.default_rng(0)
    header = f"{'size (T,F,K)':>16} {'kernel':>16} {'numpy':>10} {'compiled':>10} {'speedup':>8} {'agree':>9}"
    print(header)
    print("-" * len(header))

    for num_frames, num_bins, num_taps in SIZES:
        stacked, target, inv_w, mat, vec = make_inputs(
            rng, num_frames, num_bins, num_taps)
        kernels = [
            ("normal_eqs", _reference.accumulate_normal_equations,
             None if _fcpkern is None else _fcpkern.accumulate_normal_equations,
             (stacked, target, inv_w)),
            ("stack_cotangent", _reference.accumulate_stack_cotangent,
             None if _fcpkern is None else _fcpkern.accumulate_stack_cotangent,
             (stacked, target, inv_w, mat, vec)),
        ]
        for name, ref_fn, fast_fn, inputs in kernels:
            t_ref, out_ref = best_of(ref_fn, inputs, args.repeats)
            if fast_fn is None:
                print(f"{str((num_frames, num_bins, num_taps)):>16} {name:>16} "
                      f"{t_ref * 1e3:>8.2f}ms {'-':>10} {'-':>8} {'-':>9}")
                continue
            t_fast, out_fast = best_of(fast_fn, inputs, args.repeats)
            err = rel_err(out_fast, out_ref)
            status = "ok" if err <= 1e-12 else f"{err:.1e}!"
            print(f"{str((num_frames, num_bins, num_taps)):>16} {name:>16} "
                  f"{t_ref * 1e3:>8.2f}ms {t_fast * 1e3:>8.2f}ms "
                  f"{t_ref / t_fast:>7.1f}x {status:>9}")
            if err > 1e-12:
                raise SystemExit(f"backend disagreement on {name}: {err:.3e}")


if __name__ == "__main__":
    main()
