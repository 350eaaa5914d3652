"""Time the numba kernels against their plain-Python bodies.

    python3 benchmarks/bench_kernels.py [--repeat N]

The Python side calls ``python_impl(kernel)``, i.e. the same source run by
the interpreter, which is what ``SYNCON_DISABLE_JIT=1`` selects.
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from syncon import _jit, kernels
from syncon._jit import python_impl


def _cases():
    rng = np.random.default_rng(0)
    n = 20
    A = rng.standard_normal((40, n))
    H = A.T @ A / 40 + 1e-8 * np.eye(n)
    c = A.T @ rng.standard_normal(40) / 40
    C = np.vstack([np.ones((1, n)), np.eye(n)])
    d = np.concatenate([[1.0], np.zeros(n)])
    innov = rng.standard_normal((21, 500))
    y = rng.standard_normal((21, 120))
    start = np.zeros(20)
    return {
        "dual_active_set (J=20)": (kernels.dual_active_set, (H, c, C, d, 1, 1e-13, 4000)),
        "projected_gradient (J=20)": (kernels.projected_gradient, (H, c, True, True, np.full(n, 1 / n), 1e-12, 5000)),
        "ar1_paths (21x500)": (kernels.ar1_paths, (innov, 0.5)),
        "second_moments (20x100)": (kernels.second_moments, (y[1:, :100].copy(), y[0, :100].copy())),
        "ife_em (21x120, r=3)": (kernels.ife_em, (y, 100, 3, start, 200, 1e-9)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if not _jit.JIT_ENABLED:
        print("numba disabled (SYNCON_DISABLE_JIT set); nothing to compare")
        return
    print(f"{'kernel':28s} {'jit (ms)':>10s} {'python (ms)':>12s} {'speedup':>8s}")
    for name, (fn, a) in _cases().items():
        fn(*a)  # compile
        jit = min(timeit.repeat(lambda: fn(*a), number=1, repeat=args.repeat))
        py = min(timeit.repeat(lambda: python_impl(fn)(*a), number=1, repeat=max(1, args.repeat // 2)))
        print(f"{name:28s} {jit * 1e3:10.3f} {py * 1e3:12.3f} {py / jit:8.1f}x")


if __name__ == "__main__":
    main()
