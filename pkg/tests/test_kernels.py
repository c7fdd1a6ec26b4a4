import math
import os
import subprocess
import sys

import numpy as np
import pytest
from scipy.sparse.csgraph import dijkstra

from mgnav import kernels


def _grid_oracle(free, res):
    """Dense 8-connected adjacency with no corner cutting, via scipy."""
    ny, nx = free.shape
    n = ny * nx
    w = np.zeros((n, n))
    for y in range(ny):
        for x in range(nx):
            if not free[y, x]:
                continue
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    yy, xx = y + dy, x + dx
                    if (dy, dx) == (0, 0) or not (0 <= yy < ny and 0 <= xx < nx) or not free[yy, xx]:
                        continue
                    if dy and dx and not (free[y, xx] and free[yy, x]):
                        continue
                    w[y * nx + x, yy * nx + xx] = res * math.hypot(dy, dx)
    return w


@pytest.fixture(params=range(5))
def small_grid(request):
    rng = np.random.default_rng(request.param)
    free = rng.random((9, 11)) > 0.3
    free[4, 5] = True
    return np.ascontiguousarray(free)


@pytest.mark.parametrize("impl", [kernels.grid_dijkstra_nb, kernels.grid_dijkstra_np])
def test_grid_dijkstra_matches_dense_oracle(small_grid, impl):
    want = dijkstra(_grid_oracle(small_grid, 0.1), indices=4 * 11 + 5).reshape(small_grid.shape)
    np.testing.assert_allclose(impl(small_grid, 4, 5, 0.1), want)


def test_grid_dijkstra_blocked_source():
    free = np.ones((3, 3), dtype=bool)
    free[1, 1] = False
    for impl in (kernels.grid_dijkstra_nb, kernels.grid_dijkstra_np):
        assert np.isinf(impl(free, 1, 1, 0.1)).all()


def test_grid_field_parity_and_seed_semantics(small_grid):
    rng = np.random.default_rng(3)
    seed = np.full(small_grid.shape, np.inf)
    seed[0, :] = rng.uniform(0, 1, small_grid.shape[1])
    a = kernels.grid_field_nb(small_grid, seed, 0.1)
    b = kernels.grid_field_np(small_grid, seed, 0.1)
    np.testing.assert_allclose(a, b, atol=1e-9)
    seeded = small_grid & np.isfinite(seed)
    assert np.all(a[seeded] <= seed[seeded] + 1e-12)
    # a single zero seed reproduces the single-source field
    one = np.full(small_grid.shape, np.inf)
    one[4, 5] = 0.0
    np.testing.assert_allclose(kernels.grid_field_nb(small_grid, one, 0.1),
                               kernels.grid_dijkstra_nb(small_grid, 4, 5, 0.1))


def test_label_components_parity(small_grid):
    la, na = kernels.label_components_nb(small_grid)
    lb, nb_ = kernels.label_components_np(small_grid)
    assert na == nb_
    # same partition, possibly different label numbers
    pairs = set(zip(la.ravel().tolist(), lb.ravel().tolist()))
    assert len(pairs) == na + (1 if (~small_grid).any() else 0)
    assert np.all((la == 0) == ~small_grid)


def test_cast_rays_parity():
    rng = np.random.default_rng(11)
    occ = rng.random((60, 80)) > 0.9
    occ[30, 40] = False
    ang = np.linspace(-1, 1, 17)
    ranges = np.linspace(0.005, 3.0, 40)
    a = kernels.cast_rays_nb(occ, 4.05, 3.05, np.cos(ang), np.sin(ang), ranges, 0.1)
    b = kernels.cast_rays_np(occ, 4.05, 3.05, np.cos(ang), np.sin(ang), ranges, 0.1)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_segment_min_parity():
    rng = np.random.default_rng(12)
    field = rng.random((40, 50))
    x0, y0, x1, y1 = (rng.uniform(-0.5, 5.5, 64) for _ in range(4))
    for first_k, oob in ((0, 0.0), (1, 1.0)):
        a = kernels.segment_min_nb(field, x0, y0, x1, y1, 0.1, 0.025, first_k, oob)
        b = kernels.segment_min_np(field, x0, y0, x1, y1, 0.1, 0.025, first_k, oob)
        np.testing.assert_allclose(a, b)


def test_fps_parity_and_spacing():
    rng = np.random.default_rng(13)
    pts = np.column_stack([rng.uniform(0, 8, 500), rng.uniform(0, 6, 500), np.zeros(500)])
    a = kernels.fps_nb(pts, 1.0)
    b = kernels.fps_np(pts, 1.0)
    np.testing.assert_array_equal(a, b)
    assert a[0] == 0
    sel = pts[a]
    d = np.linalg.norm(sel[:, None] - sel[None], axis=2) + np.eye(len(a)) * 1e9
    assert d.min() >= 1.0
    # every point is within the spacing of some selected centre
    cover = np.linalg.norm(pts[:, None] - sel[None], axis=2).min(axis=1)
    assert cover.max() < 1.0


def test_mark_visible_parity():
    rng = np.random.default_rng(14)
    occ = rng.random((50, 50)) > 0.92
    occ[25, 25] = False
    o = np.linspace(-math.pi, math.pi, 72, endpoint=False)
    ca = np.zeros_like(occ)
    cb = np.zeros_like(occ)
    kernels.mark_visible_nb(occ, ca, 2.55, 2.55, 1.5, np.cos(o), np.sin(o), 0.05, 0.1)
    kernels.mark_visible_np(occ, cb, 2.55, 2.55, 1.5, np.cos(o), np.sin(o), 0.05, 0.1)
    np.testing.assert_array_equal(ca, cb)
    assert not (ca & occ).any()


def test_env_flag_selects_numpy_backend():
    code = "from mgnav import kernels; print(kernels.BACKEND, kernels.fps is kernels.fps_np)"
    env = dict(os.environ, MGNAV_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "True"]
