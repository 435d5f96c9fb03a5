"""Both kernel flavors (numba vs pure NumPy) must agree, bitwise where stated."""

import numpy as np
import pytest

from trackmarl import kernels

needs_numba = pytest.mark.skipif(not kernels.NUMBA_ENABLED, reason="numba disabled or missing")


def _random_circles(rng, n=8, size=64):
    rows = rng.integers(0, size, n)
    cols = rng.integers(0, size, n)
    radii = rng.uniform(1.0, 5.0, n)
    colors = rng.integers(1, 255, (n, 3)).astype(np.uint8)
    return rows, cols, radii, colors


@needs_numba
def test_rasterize_paths_identical(rng):
    for _ in range(20):
        rows, cols, radii, colors = _random_circles(rng)
        a = np.zeros((64, 64, 3), np.uint8)
        b = np.zeros((64, 64, 3), np.uint8)
        kernels.rasterize_frame_numba(a, rows, cols, radii, colors)
        kernels.rasterize_frame_numpy(b, rows, cols, radii, colors)
        assert np.array_equal(a, b)


@needs_numba
def test_role_map_paths_identical(rng):
    colors = np.array([[230, 60, 60], [60, 200, 60], [70, 90, 235]], np.int64)
    for _ in range(10):
        img = rng.integers(0, 256, (64, 64, 3)).astype(np.uint8)
        # salt exact role colors in
        for r in range(3):
            ys, xs = rng.integers(0, 64, 30), rng.integers(0, 64, 30)
            img[ys, xs] = colors[r]
        a = kernels.role_map_numba(img, colors, 10)
        b = kernels.role_map_numpy(img, colors, 10)
        assert np.array_equal(a, b)


@needs_numba
def test_blob_stats_paths_identical(rng):
    for _ in range(10):
        rmap = rng.integers(-1, 3, (64, 64)).astype(np.int32)
        out_a = kernels.blob_stats_numba(rmap)
        out_b = kernels.blob_stats_numpy(rmap)
        for a, b in zip(out_a, out_b):
            assert np.array_equal(a, b)


@needs_numba
def test_lap_paths_identical(rng):
    for _ in range(50):
        n = rng.integers(1, 9)
        cost = rng.uniform(0, 10, (n, n))
        ra, ua, va = kernels.lap_solve_numba(cost)
        rb, ub, vb = kernels.lap_solve_numpy(cost)
        assert np.array_equal(ra, rb)
        assert np.array_equal(ua, ub)
        assert np.array_equal(va, vb)


@needs_numba
def test_lex_min_paths_identical(rng):
    for _ in range(50):
        n = int(rng.integers(2, 7))
        adm = rng.random((n, n)) < 0.6
        np.fill_diagonal(adm, True)  # guarantees a perfect matching exists
        seed_assign = np.arange(n)
        a = kernels.lex_min_matching_numba(adm.copy(), seed_assign.copy())
        b = kernels.lex_min_matching_numpy(adm.copy(), seed_assign.copy())
        assert np.array_equal(a, b)


@needs_numba
def test_physics_paths_identical(rng):
    for _ in range(20):
        m = int(rng.integers(2, 8))
        pos = rng.uniform(-0.9, 0.9, (m, 2))
        vel = rng.uniform(-1, 1, (m, 2))
        acc = rng.uniform(-5, 5, (m, 2))
        radii = rng.uniform(0.03, 0.2, m)
        vmax = rng.uniform(0.5, 1.5, m)
        mass = rng.uniform(0.5, 4.0, m)
        movable = rng.random(m) < 0.8
        collidable = rng.random(m) < 0.8
        out_a = kernels.physics_step_numba(pos, vel, acc, radii, vmax, mass, movable, collidable, 0.5, 0.1, 100.0, 1.0)
        out_b = kernels.physics_step_numpy(pos, vel, acc, radii, vmax, mass, movable, collidable, 0.5, 0.1, 100.0, 1.0)
        for a, b in zip(out_a, out_b):
            assert np.array_equal(a, b)


@needs_numba
def test_policy_forward_paths_close(rng):
    # exp/log may differ by ulps between compiled and interpreted code
    phi = rng.normal(size=(4, 10))
    adj = np.ones((4, 4)) - np.eye(4)
    wo0, ws0 = rng.normal(size=(2, 10, 8))
    wo1, ws1 = rng.normal(size=(2, 8, 8))
    pw1, pw2 = rng.normal(size=(8, 8)), rng.normal(size=(8, 5))
    vw1, vw2 = rng.normal(size=(8, 8)), rng.normal(size=(8, 1))
    z8, z5, z1 = np.zeros(8), np.zeros(5), np.zeros(1)
    a = kernels.gcn_policy_numba(phi, adj, wo0, ws0, wo1, ws1, pw1, z8, pw2, z5, vw1, z8, vw2, z1)
    b = kernels.gcn_policy_numpy(phi, adj, wo0, ws0, wo1, ws1, pw1, z8, pw2, z5, vw1, z8, vw2, z1)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-15)

    w0 = rng.normal(size=(40, 8))
    w1 = rng.normal(size=(8, 8))
    m_a = kernels.mlp_policy_numba(phi, w0, z8, w1, z8, pw2, z5, vw2, z1)
    m_b = kernels.mlp_policy_numpy(phi, w0, z8, w1, z8, pw2, z5, vw2, z1)
    for x, y in zip(m_a, m_b):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-15)


def test_lap_solve_matches_brute_force(rng):
    from itertools import permutations

    for _ in range(100):
        n = int(rng.integers(1, 6))
        cost = rng.uniform(0, 1, (n, n))
        assign, _, _ = kernels.lap_solve(cost)
        total = sum(cost[i, assign[i]] for i in range(n))
        best = min(sum(cost[i, p[i]] for i in range(n)) for p in permutations(range(n)))
        assert total <= best + 1e-12


def test_lap_duals_certify_optimality(rng):
    for _ in range(50):
        n = int(rng.integers(2, 8))
        cost = rng.uniform(0, 5, (n, n))
        assign, u, v = kernels.lap_solve(cost)
        reduced = cost - u[:, None] - v[None, :]
        assert reduced.min() > -1e-9
        slack = np.array([reduced[i, assign[i]] for i in range(n)])
        assert np.abs(slack).max() < 1e-9
