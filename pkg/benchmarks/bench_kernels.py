#!/usr/bin/env python3
"""Timing comparison of the compiled kernels against the numpy fallback.

Runs the GRU forward/backward passes and the CRF dynamic programs on
pipeline-shaped inputs and reports per-call milliseconds plus speedup.

    python3 benchmarks/bench_kernels.py [--steps 256] [--hidden 64] [--repeat 20]
"""

import argparse
import time

import numpy as np

from apthunt.kernels import pure

try:
    from apthunt.kernels import _core
except ImportError:
    _core = None


def time_call(fn, args, repeat):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1000.0


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=256)
    parser.add_argument("--input-dim", type=int, default=64)
    parser.add_argument("--hidden", type=int, default=64)
    parser.add_argument("--tags", type=int, default=41)
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(size=(args.steps, args.input_dim))
    h, k = args.hidden, args.input_dim
    weights = [rng.normal(size=s) * 0.3
               for s in [(h, k), (h, h), (h,)] * 3]
    fwd_out = pure.gru_forward(x, *weights)
    d_hidden = rng.normal(size=(args.steps, h))
    bwd_args = (x, *fwd_out, d_hidden,
                weights[0], weights[1], weights[3], weights[4], weights[6], weights[7])

    em = rng.normal(size=(args.steps, args.tags))
    trans = rng.normal(size=(args.tags, args.tags))
    start, end = rng.normal(size=args.tags), rng.normal(size=args.tags)
    crf_args = (em, trans, start, end)

    cases = [
        ("gru_forward", (x, *weights)),
        ("gru_backward", bwd_args),
        ("crf_forward", crf_args),
        ("crf_viterbi", crf_args),
        ("crf_marginals", crf_args),
    ]
    print(f"steps={args.steps} input_dim={k} hidden={h} tags={args.tags} "
          f"repeat={args.repeat}")
    header = f"{'kernel':<14} {'pure (ms)':>10} {'compiled (ms)':>14} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for name, call_args in cases:
        pure_ms = time_call(getattr(pure, name), call_args, args.repeat)
        if _core is None:
            print(f"{name:<14} {pure_ms:>10.3f} {'n/a':>14} {'n/a':>8}")
            continue
        core_ms = time_call(getattr(_core, name), call_args, args.repeat)
        print(f"{name:<14} {pure_ms:>10.3f} {core_ms:>14.3f} {pure_ms / core_ms:>7.1f}x")
    if _core is None:
        print("\ncompiled kernels not built; install with Cython available to compare")


if __name__ == "__main__":
    main()
