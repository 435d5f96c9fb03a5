"""Benchmark the numba kernels against their pure-NumPy fallbacks.

Usage:
    python benchmarks/bench_kernels.py [--iterations N] [--image-size S]

Each hot kernel is timed in both flavors on identical inputs; the script also
times one full environment+perception+tracking pipeline step on whichever
flavor is active (controlled by TRACKMARL_DISABLE_NUMBA).
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from trackmarl import arena, kernels, marl


def bench(fn, *args, iterations, copy_img=None):
    if fn is None:
        return None
    for _ in range(3):  # warmup / JIT
        if copy_img is not None:
            args = (copy_img.copy(),) + args[1:]
        fn(*args)
    times = []
    for _ in range(iterations):
        if copy_img is not None:
            fresh = copy_img.copy()
            call_args = (fresh,) + args[1:]
        else:
            call_args = args
        t0 = time.perf_counter()
        fn(*call_args)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def report(name, t_numba, t_numpy):
    if t_numba is None:
        print(f"{name:<22} numba: unavailable        numpy: {t_numpy * 1e6:9.1f} us")
        return
    speedup = t_numpy / t_numba
    print(
        f"{name:<22} numba: {t_numba * 1e6:9.1f} us   numpy: {t_numpy * 1e6:9.1f} us   speedup: {speedup:7.1f}x"
    )


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iterations", type=int, default=200)
    parser.add_argument("--image-size", type=int, default=64)
    args = parser.parse_args()
    it = args.iterations
    size = args.image_size
    rng = np.random.default_rng(0)

    print(f"numba active in package: {kernels.NUMBA_ENABLED}")
    print(f"iterations: {it}, image: {size}x{size}\n")

    # rasterize
    n_ent = 6
    img = np.zeros((size, size, 3), np.uint8)
    rows = rng.integers(4, size - 4, n_ent)
    cols = rng.integers(4, size - 4, n_ent)
    radii = rng.uniform(1.5, 4.0, n_ent)
    colors = rng.integers(40, 255, (n_ent, 3)).astype(np.uint8)
    report(
        "rasterize_frame",
        bench(kernels.rasterize_frame_numba, img, rows, cols, radii, colors, iterations=it, copy_img=img),
        bench(kernels.rasterize_frame_numpy, img, rows, cols, radii, colors, iterations=it, copy_img=img),
    )
    kernels.rasterize_frame(img, rows, cols, radii, colors)

    # role map
    role_colors = colors[:4].astype(np.int64)
    report(
        "role_match_map",
        bench(kernels.role_map_numba, img, role_colors, 10, iterations=it),
        bench(kernels.role_map_numpy, img, role_colors, 10, iterations=it),
    )

    # blob stats
    rmap = kernels.role_match_map(img, role_colors, 10)
    report(
        "blob_stats",
        bench(kernels.blob_stats_numba, rmap, iterations=it),
        bench(kernels.blob_stats_numpy, rmap, iterations=it),
    )

    # assignment solve (8x8, the padded per-frame problem size)
    cost = rng.uniform(0.0, 1.0, (8, 8))
    report(
        "lap_solve",
        bench(kernels.lap_solve_numba, cost, iterations=it),
        bench(kernels.lap_solve_numpy, cost, iterations=it),
    )

    # physics step
    m = 6
    pos = rng.uniform(-0.9, 0.9, (m, 2))
    vel = rng.uniform(-0.5, 0.5, (m, 2))
    acc = rng.uniform(-5, 5, (m, 2))
    radii_w = np.full(m, 0.06)
    vmax = np.ones(m)
    mass = np.ones(m)
    movable = np.ones(m, bool)
    collidable = np.ones(m, bool)
    report(
        "physics_step",
        bench(kernels.physics_step_numba, pos, vel, acc, radii_w, vmax, mass, movable, collidable, 0.5, 0.1, 100.0, 1.0, iterations=it),
        bench(kernels.physics_step_numpy, pos, vel, acc, radii_w, vmax, mass, movable, collidable, 0.5, 0.1, 100.0, 1.0, iterations=it),
    )

    # single-graph GCN policy forward
    phi = rng.normal(size=(6, 40))
    adj = np.ones((6, 6)) - np.eye(6)
    wo0, ws0 = rng.normal(size=(40, 64)), rng.normal(size=(40, 64))
    wo1, ws1 = rng.normal(size=(64, 64)), rng.normal(size=(64, 64))
    pw1, pw2 = rng.normal(size=(64, 64)), rng.normal(size=(64, 5))
    vw1, vw2 = rng.normal(size=(64, 64)), rng.normal(size=(64, 1))
    z64, z5, z1 = np.zeros(64), np.zeros(5), np.zeros(1)
    fwd_args = (phi, adj, wo0, ws0, wo1, ws1, pw1, z64, pw2, z5, vw1, z64, vw2, z1)
    report(
        "gcn_policy_forward",
        bench(kernels.gcn_policy_numba, *fwd_args, iterations=it),
        bench(kernels.gcn_policy_numpy, *fwd_args, iterations=it),
    )

    # end-to-end pipeline step on the active flavor
    cfg = arena.TaskConfig(image_size=size)
    pipe = marl.EnvPipeline(cfg)
    pipe.reset(np.random.SeedSequence(0), np.random.SeedSequence(1))
    actions = np.zeros(cfg.n_agents, np.int64)
    t0 = time.perf_counter()
    steps = 0
    while steps < 500:
        if pipe.state.step_index >= cfg.episode_len:
            pipe.reset(np.random.SeedSequence(steps), np.random.SeedSequence(steps + 1))
        pipe.step(actions)
        steps += 1
    dt = (time.perf_counter() - t0) / steps
    flavor = "numba" if kernels.NUMBA_ENABLED else "numpy"
    print(f"\npipeline step ({flavor:>5}): {dt * 1e6:9.1f} us (render+detect+track+graphs)")


if __name__ == "__main__":
    main()
