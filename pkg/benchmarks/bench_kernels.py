#!/usr/bin/env python3
"""Time the jitted kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py [--repeats 5]

The same kernels back the forward simulator (coded projection), the noise
model (Poisson sampling from uniforms), the TV solver (adjoint), and SLIC
(assignment step). Setting SLMSPEC_NO_NUMBA=1 switches the package to the
numpy path; this script times both regardless of the flag.
"""

import argparse
import time

import numpy as np

from slmspec import _kernels as K


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm-up (and JIT compile)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not K.NUMBA_AVAILABLE:
        print("numba is not importable; only the numpy path is available")
        return

    rng = np.random.default_rng(0)
    rows = []

    # coded projection: 256x256 frame, 53 bands
    data = rng.uniform(0, 1, (256, 256, 53))
    bank = rng.uniform(0, 1, (256, 53))
    pidx = rng.integers(0, 256, (256, 256)).astype(np.int64)
    weight = rng.uniform(0.5, 1.0, 53)
    t_np = timeit(K.coded_forward_numpy, data, bank, pidx, weight,
                  repeats=args.repeats)
    t_jit = timeit(K.coded_forward_jit, data, bank, pidx, weight,
                   repeats=args.repeats)
    rows.append(("coded_forward 256x256x53", t_np, t_jit))

    resid = rng.normal(0, 1, (256, 256))
    out = np.zeros((256, 256, 53))
    t_np = timeit(lambda: K.coded_adjoint_numpy(resid, bank, pidx, weight,
                                                out.copy()),
                  repeats=args.repeats)
    t_jit = timeit(lambda: K.coded_adjoint_jit(resid, bank, pidx, weight,
                                               out.copy()),
                   repeats=args.repeats)
    rows.append(("coded_adjoint 256x256x53", t_np, t_jit))

    # Poisson sampling, mixed regimes
    mu = np.concatenate([rng.uniform(0, 29, 500_000),
                         rng.uniform(30, 2000, 500_000)])
    u = rng.random(1_000_000)
    t_np = timeit(K.poisson_from_uniforms_numpy, mu, u, repeats=args.repeats)
    t_jit = timeit(K.poisson_from_uniforms_jit, mu, u, repeats=args.repeats)
    rows.append(("poisson 1e6 pixels", t_np, t_jit))

    # SLIC assignment: 256x256, 64 centers, 3 channels
    feats = rng.uniform(0, 1, (256, 256, 3))
    ny = nx = 8
    cy = np.repeat((np.arange(ny) + 0.5) * 256 / ny, nx)
    cx = np.tile((np.arange(nx) + 0.5) * 256 / nx, ny)
    ccol = rng.uniform(0, 1, (64, 3))
    labels = np.empty((256, 256), dtype=np.int64)
    dists = np.empty((256, 256))
    t_np = timeit(K.slic_assign_numpy, feats, cy, cx, ccol, 1e-4, 64,
                  labels, dists, repeats=args.repeats)
    t_jit = timeit(K.slic_assign_jit, feats, cy, cx, ccol, 1e-4, 64,
                   labels, dists, repeats=args.repeats)
    rows.append(("slic_assign 256x256 q=64", t_np, t_jit))

    name_w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{name_w}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}")
    for name, t_np, t_jit in rows:
        print(f"{name:<{name_w}}  {t_np * 1e3:>8.2f}ms  {t_jit * 1e3:>8.2f}ms"
              f"  {t_np / t_jit:>7.1f}x")


if __name__ == "__main__":
    main()
