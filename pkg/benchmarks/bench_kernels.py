"""Time the numba kernels against their numpy/scipy counterparts.

Usage:  python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Inputs come from a generated scene so sizes match what the navigation stack
sees. Each pair is checked for agreement before it is timed; numba
compilation happens in a warm-up call outside the timed region.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import timeit

import numpy as np

from mgnav import kernels
from mgnav import simworld as sw


def _cases(scene: sw.Scene):
    rng = np.random.default_rng(7)
    occ = np.ascontiguousarray(scene.occupancy)
    free = np.ascontiguousarray(~occ)
    res = scene.resolution
    sensor = sw.DEFAULT_SENSOR
    free_xy = np.argwhere(scene.clearance > 0.3)
    iy, ix = free_xy[len(free_xy) // 2]
    ox, oy = (ix + 0.5) * res, (iy + 0.5) * res
    ang = 0.3 + sensor.ray_offsets
    cos_t, sin_t = np.cos(ang), np.sin(ang)

    n_seg = 256
    x0 = rng.uniform(0, scene.params.extent_x, n_seg)
    y0 = rng.uniform(0, scene.params.extent_y, n_seg)
    x1 = rng.uniform(0, scene.params.extent_x, n_seg)
    y1 = rng.uniform(0, scene.params.extent_y, n_seg)
    field = scene.free_float

    patch = free[iy - 20: iy + 20, ix - 20: ix + 20].copy()
    seed = np.full(patch.shape, np.inf)
    seed[0, :] = rng.uniform(0, 3, patch.shape[1])
    pts = np.column_stack([rng.uniform(0, 16, 2000), rng.uniform(0, 12, 2000), np.zeros(2000)])

    def vis(fn):
        cov = np.zeros_like(occ)
        o = np.linspace(-math.pi, math.pi, 72, endpoint=False)
        fn(occ, cov, ox, oy, 3.0, np.cos(o), np.sin(o), res / 2.0, res)
        return cov

    return [
        ("cast_rays", lambda f: f(occ, ox, oy, cos_t, sin_t, sensor.ranges, res),
         kernels.cast_rays_nb, kernels.cast_rays_np),
        ("segment_min", lambda f: f(field, x0, y0, x1, y1, res, res / 4.0, 0, 0.0),
         kernels.segment_min_nb, kernels.segment_min_np),
        ("grid_dijkstra", lambda f: f(free, int(iy), int(ix), res),
         kernels.grid_dijkstra_nb, kernels.grid_dijkstra_np),
        ("grid_field", lambda f: f(patch, seed, res),
         kernels.grid_field_nb, kernels.grid_field_np),
        ("label_components", lambda f: f(free), kernels.label_components_nb, kernels.label_components_np),
        ("fps", lambda f: f(pts, 1.0), kernels.fps_nb, kernels.fps_np),
        ("mark_visible", vis, kernels.mark_visible_nb, kernels.mark_visible_np),
    ]


def _agree(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_agree(x, y) for x, y in zip(a, b))
    if isinstance(a, np.ndarray):
        return a.shape == b.shape and np.allclose(a, b, rtol=1e-9, atol=1e-9, equal_nan=True)
    return a == b


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    scene = sw.generate_scene(sw.SceneParams(seed=0))
    print(f"backend at import: {kernels.BACKEND}; grid {scene.shape[0]}x{scene.shape[1]}")
    print(f"{'kernel':<18} {'numba (ms)':>11} {'numpy (ms)':>11} {'speedup':>8}  agree")
    rows = []
    for name, call, nb, npf in _cases(scene):
        ok = _agree(call(nb), call(npf))  # also warms up the jit
        number = 3
        t_nb = min(timeit.repeat(lambda: call(nb), number=number, repeat=args.repeat)) / number
        t_np = min(timeit.repeat(lambda: call(npf), number=number, repeat=args.repeat)) / number
        rows.append({"kernel": name, "numba_ms": 1e3 * t_nb, "numpy_ms": 1e3 * t_np, "agree": ok})
        print(f"{name:<18} {1e3 * t_nb:>11.3f} {1e3 * t_np:>11.3f} {t_np / t_nb:>7.1f}x  {ok}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)
    return 0 if all(r["agree"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
