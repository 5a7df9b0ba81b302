#!/usr/bin/env python3
"""Benchmark the numba kernel build against the pure-numpy fallback.

Times each hot kernel at two problem sizes (the default scene scale and a
larger stress size) and prints a speedup table. The numba build is warmed
first so jit compilation does not pollute the numbers.

Run: python3 benchmarks/bench_kernels.py [--repeats 5]
"""

import argparse
import time

import numpy as np

from ow3d import _kernels_numpy as knp

try:
    from ow3d import _kernels_numba as knb
except ImportError:
    knb = None


def timeit(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_nearest_pixel_index(rng, n_points, side):
    us = rng.uniform(0, side, size=n_points)
    vs = rng.uniform(0, side, size=n_points)
    zs = rng.uniform(0.5, 8.0, size=n_points)
    idxs = np.arange(n_points, dtype=np.int64)
    args = (us, vs, zs, idxs, side, side, 1.5)
    return lambda impl: impl.nearest_pixel_index(*args)


def bench_greedy_select(rng, n_pix, n_points, budget):
    prior = rng.uniform(0, 1, size=n_pix)
    owner = np.where(
        rng.uniform(size=n_pix) < 0.4, rng.integers(0, n_points, size=n_pix), -1
    ).astype(np.int64)
    pts = rng.uniform(0, 5, size=(n_points, 3))

    def run(impl):
        return impl.greedy_select(prior.copy(), owner, pts, 0.5, budget)

    return run


def bench_raycast(rng, n_rays, n_boxes):
    origin = np.array([2.5, -3.2, 8.0])
    dirs = rng.normal(size=(n_rays, 3))
    dirs[:, 2] = -np.abs(dirs[:, 2])
    lo = rng.uniform(0, 4, size=(n_boxes, 3))
    hi = lo + rng.uniform(0.3, 1.2, size=(n_boxes, 3))
    return lambda impl: impl.raycast_aabbs(origin, dirs, lo, hi, 1e-9)


def bench_neighbors(rng, n):
    pts = rng.uniform(0, 3, size=(n, 3))
    return lambda impl: impl.radius_neighbors(pts, 0.1)


def bench_conv3d(rng, c, side):
    x = rng.normal(size=(c, side, side, side))
    w = rng.normal(size=(c, c, 3, 3, 3))
    return lambda impl: impl.conv3d_k3(x, w)


def bench_conv3d_grads(rng, c, side):
    x = rng.normal(size=(c, side, side, side))
    w = rng.normal(size=(c, c, 3, 3, 3))
    dy = rng.normal(size=(c, side, side, side))

    def run(impl):
        impl.conv3d_k3_grad_weight(dy, x)
        impl.conv3d_k3_grad_input(dy, w)

    return run


CASES = [
    ("pixel index  160px 25k pts", lambda rng: bench_nearest_pixel_index(rng, 25_000, 160)),
    ("pixel index  320px 100k pts", lambda rng: bench_nearest_pixel_index(rng, 100_000, 320)),
    ("greedy select 160^2 budget 2k", lambda rng: bench_greedy_select(rng, 160 * 160, 12_000, 2000)),
    ("greedy select 256^2 budget 4k", lambda rng: bench_greedy_select(rng, 256 * 256, 30_000, 4000)),
    ("ray cast     25k rays x 8", lambda rng: bench_raycast(rng, 25_600, 8)),
    ("ray cast     100k rays x 16", lambda rng: bench_raycast(rng, 102_400, 16)),
    ("neighbors    2k pts", lambda rng: bench_neighbors(rng, 2000)),
    ("neighbors    6k pts", lambda rng: bench_neighbors(rng, 6000)),
    ("conv3d fwd   C8 12^3", lambda rng: bench_conv3d(rng, 8, 12)),
    ("conv3d grads C8 12^3", lambda rng: bench_conv3d_grads(rng, 8, 12)),
]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if knb is None:
        print("numba unavailable; nothing to compare")
        return

    print(f"{'kernel':<32s} {'numpy':>10s} {'numba':>10s} {'speedup':>9s}")
    for name, make in CASES:
        rng = np.random.default_rng(7)
        run = make(rng)
        run(knb)  # warm jit
        t_np = timeit(lambda: run(knp), args.repeats)
        t_nb = timeit(lambda: run(knb), args.repeats)
        print(f"{name:<32s} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
