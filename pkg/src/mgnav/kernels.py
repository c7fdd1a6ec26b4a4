"""Hot inner loops: ray casting, segment sampling, grid distance fields, flood fill, FPS.

Every kernel exists twice: an ``@njit`` loop (``*_nb``) and a vectorised numpy
or scipy variant (``*_np``). The public name binds to one of them at import
time according to :data:`mgnav._accel.NUMBA_ENABLED`. Both variants perform the
same floating point operations in the same order where that is feasible, so
integer outputs (cell indices, hit indices, selections) agree exactly and float
outputs agree to rounding.

Grid convention: ``grid[iy, ix]`` covers ``x in [ix*res, (ix+1)*res)`` and
``y in [iy*res, (iy+1)*res)``. Cells outside the grid count as blocked.
"""

from __future__ import annotations

import heapq
import math

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as _sp_dijkstra

from ._accel import NUMBA_ENABLED, njit

SQRT2 = math.sqrt(2.0)

# --------------------------------------------------------------------------
# ray casting


@njit(cache=True)
def cast_rays_nb(occ, ox, oy, cos_t, sin_t, ranges, res):
    ny, nx = occ.shape
    n_rays = cos_t.shape[0]
    n_s = ranges.shape[0]
    cx = np.empty((n_rays, n_s), dtype=np.int64)
    cy = np.empty((n_rays, n_s), dtype=np.int64)
    hit = np.full(n_rays, n_s, dtype=np.int64)
    for i in range(n_rays):
        hx = -1
        hy = -1
        for j in range(n_s):
            if hx >= 0:
                cx[i, j] = hx
                cy[i, j] = hy
                continue
            x = ox + ranges[j] * cos_t[i]
            y = oy + ranges[j] * sin_t[i]
            ix = int(math.floor(x / res))
            iy = int(math.floor(y / res))
            inside = 0 <= ix < nx and 0 <= iy < ny
            if not inside:
                ix = min(max(ix, 0), nx - 1)
                iy = min(max(iy, 0), ny - 1)
            cx[i, j] = ix
            cy[i, j] = iy
            if not inside or occ[iy, ix]:
                hit[i] = j
                hx = ix
                hy = iy
    return cx, cy, hit


def cast_rays_np(occ, ox, oy, cos_t, sin_t, ranges, res):
    ny, nx = occ.shape
    n_s = ranges.shape[0]
    xs = ox + ranges[None, :] * cos_t[:, None]
    ys = oy + ranges[None, :] * sin_t[:, None]
    ix = np.floor(xs / res).astype(np.int64)
    iy = np.floor(ys / res).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    ix = np.clip(ix, 0, nx - 1)
    iy = np.clip(iy, 0, ny - 1)
    blocked = ~inside | occ[iy, ix]
    any_hit = blocked.any(axis=1)
    first = np.argmax(blocked, axis=1)
    hit = np.where(any_hit, first, n_s).astype(np.int64)
    # freeze every sample after the hit onto the hit cell
    col = np.minimum(np.arange(n_s)[None, :], hit[:, None])
    col = np.minimum(col, n_s - 1)
    rows = np.arange(cos_t.shape[0])[:, None]
    return ix[rows, col], iy[rows, col], hit


# --------------------------------------------------------------------------
# segment sampling


@njit(cache=True)
def segment_min_nb(field, x0, y0, x1, y1, res, step, first_k, oob):
    """Minimum of ``field`` sampled along each segment (k = first_k..n)."""
    ny, nx = field.shape
    m = x0.shape[0]
    out = np.empty(m, dtype=np.float64)
    for s in range(m):
        dx = x1[s] - x0[s]
        dy = y1[s] - y0[s]
        n = int(math.ceil(math.sqrt(dx * dx + dy * dy) / step))
        if n < 1:
            n = 1
        best = np.inf
        for k in range(first_k, n + 1):
            t = k / n
            x = x0[s] + t * dx
            y = y0[s] + t * dy
            ix = int(math.floor(x / res))
            iy = int(math.floor(y / res))
            if 0 <= ix < nx and 0 <= iy < ny:
                v = field[iy, ix]
            else:
                v = oob
            if v < best:
                best = v
        out[s] = best
    return out


def segment_min_np(field, x0, y0, x1, y1, res, step, first_k, oob):
    ny, nx = field.shape
    dx = x1 - x0
    dy = y1 - y0
    n = np.ceil(np.sqrt(dx * dx + dy * dy) / step).astype(np.int64)
    n = np.maximum(n, 1)
    kmax = int(n.max()) if n.size else 1
    k = np.arange(kmax + 1)[None, :]
    t = k / n[:, None]
    valid = (k >= first_k) & (k <= n[:, None])
    xs = x0[:, None] + t * dx[:, None]
    ys = y0[:, None] + t * dy[:, None]
    ix = np.floor(xs / res).astype(np.int64)
    iy = np.floor(ys / res).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    vals = np.where(inside, field[np.clip(iy, 0, ny - 1), np.clip(ix, 0, nx - 1)], oob)
    vals = np.where(valid, vals, np.inf)
    return vals.min(axis=1).astype(np.float64)


# --------------------------------------------------------------------------
# 8-connected grid Dijkstra without corner cutting

_OFFSETS = np.array(
    [[0, 1], [0, -1], [1, 0], [-1, 0], [1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.int64
)


@njit(cache=True)
def grid_dijkstra_nb(free, src_y, src_x, res):
    ny, nx = free.shape
    dist = np.full((ny, nx), np.inf)
    done = np.zeros((ny, nx), dtype=np.bool_)
    if not free[src_y, src_x]:
        return dist
    dist[src_y, src_x] = 0.0
    diag = math.sqrt(2.0) * res
    heap = [(0.0, src_y * nx + src_x)]
    while len(heap) > 0:
        d, idx = heapq.heappop(heap)
        y = idx // nx
        x = idx - y * nx
        if done[y, x]:
            continue
        done[y, x] = True
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dx == 0 and dy == 0:
                    continue
                yy = y + dy
                xx = x + dx
                if yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                    continue
                if not free[yy, xx] or done[yy, xx]:
                    continue
                if dx != 0 and dy != 0:
                    if not free[y, xx] or not free[yy, x]:
                        continue
                    nd = d + diag
                else:
                    nd = d + res
                if nd < dist[yy, xx]:
                    dist[yy, xx] = nd
                    heapq.heappush(heap, (nd, yy * nx + xx))
    return dist


def _grid_graph(free, res):
    ny, nx = free.shape
    idx = np.arange(ny * nx).reshape(ny, nx)
    rows, cols, w = [], [], []
    for dy, dx in _OFFSETS:
        ys = slice(max(0, -dy), ny - max(0, dy))
        xs = slice(max(0, -dx), nx - max(0, dx))
        yd = slice(max(0, dy), ny - max(0, -dy))
        xd = slice(max(0, dx), nx - max(0, -dx))
        ok = free[ys, xs] & free[yd, xd]
        if dx != 0 and dy != 0:
            # both orthogonal neighbours must be free
            ok &= free[ys, xd] & free[yd, xs]
            cost = SQRT2 * res
        else:
            cost = res
        rows.append(idx[ys, xs][ok])
        cols.append(idx[yd, xd][ok])
        w.append(np.full(int(ok.sum()), cost))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    return csr_matrix((np.concatenate(w), (r, c)), shape=(ny * nx, ny * nx))


def grid_dijkstra_np(free, src_y, src_x, res):
    ny, nx = free.shape
    if not free[src_y, src_x]:
        return np.full((ny, nx), np.inf)
    g = _grid_graph(free, res)
    d = _sp_dijkstra(g, directed=True, indices=int(src_y * nx + src_x))
    return d.reshape(ny, nx)


@njit(cache=True)
def grid_field_nb(free, seed_cost, res):
    ny, nx = free.shape
    dist = np.full((ny, nx), np.inf)
    done = np.zeros((ny, nx), dtype=np.bool_)
    diag = math.sqrt(2.0) * res
    heap = [(0.0, 0)]
    heap.pop()
    for y in range(ny):
        for x in range(nx):
            c = seed_cost[y, x]
            if free[y, x] and c < np.inf:
                dist[y, x] = c
                heapq.heappush(heap, (c, y * nx + x))
    while len(heap) > 0:
        d, idx = heapq.heappop(heap)
        y = idx // nx
        x = idx - y * nx
        if done[y, x]:
            continue
        done[y, x] = True
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dx == 0 and dy == 0:
                    continue
                yy = y + dy
                xx = x + dx
                if yy < 0 or yy >= ny or xx < 0 or xx >= nx:
                    continue
                if not free[yy, xx] or done[yy, xx]:
                    continue
                if dx != 0 and dy != 0:
                    if not free[y, xx] or not free[yy, x]:
                        continue
                    nd = d + diag
                else:
                    nd = d + res
                if nd < dist[yy, xx]:
                    dist[yy, xx] = nd
                    heapq.heappush(heap, (nd, yy * nx + xx))
    return dist


def grid_field_np(free, seed_cost, res):
    ny, nx = free.shape
    n = ny * nx
    seeds = np.flatnonzero((free & np.isfinite(seed_cost)).ravel())
    if len(seeds) == 0:
        return np.full((ny, nx), np.inf)
    # virtual source joined to every seed; the offset keeps zero-cost links explicit
    off = 1.0
    g = _grid_graph(free, res).tocoo()
    r = np.concatenate([g.row, np.full(len(seeds), n)])
    c = np.concatenate([g.col, seeds])
    w = np.concatenate([g.data, seed_cost.ravel()[seeds] + off])
    full = csr_matrix((w, (r, c)), shape=(n + 1, n + 1))
    d = _sp_dijkstra(full, directed=True, indices=n)[:n] - off
    return d.reshape(ny, nx)


# --------------------------------------------------------------------------
# 4-connected component labelling (equivalent to 8-connected movement
# without corner cutting)


@njit(cache=True)
def label_components_nb(free):
    ny, nx = free.shape
    labels = np.zeros((ny, nx), dtype=np.int32)
    queue = np.empty(ny * nx, dtype=np.int64)
    n = 0
    for y0 in range(ny):
        for x0 in range(nx):
            if not free[y0, x0] or labels[y0, x0] != 0:
                continue
            n += 1
            labels[y0, x0] = n
            head = 0
            tail = 1
            queue[0] = y0 * nx + x0
            while head < tail:
                idx = queue[head]
                head += 1
                y = idx // nx
                x = idx - y * nx
                for k in range(4):
                    if k == 0:
                        yy, xx = y + 1, x
                    elif k == 1:
                        yy, xx = y - 1, x
                    elif k == 2:
                        yy, xx = y, x + 1
                    else:
                        yy, xx = y, x - 1
                    if 0 <= yy < ny and 0 <= xx < nx and free[yy, xx] and labels[yy, xx] == 0:
                        labels[yy, xx] = n
                        queue[tail] = yy * nx + xx
                        tail += 1
    return labels, n


def label_components_np(free):
    labels, n = ndimage.label(free)
    return labels.astype(np.int32), int(n)


# --------------------------------------------------------------------------
# farthest point sampling with a spacing stop rule


@njit(cache=True)
def fps_nb(points, min_spacing):
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = 0
    count = 0
    while True:
        out[count] = cur
        count += 1
        px = points[cur, 0]
        py = points[cur, 1]
        pz = points[cur, 2]
        best = -1.0
        arg = -1
        for i in range(n):
            dx = points[i, 0] - px
            dy = points[i, 1] - py
            dz = points[i, 2] - pz
            d = math.sqrt(dx * dx + dy * dy + dz * dz)
            if d < mind[i]:
                mind[i] = d
            if mind[i] > best:
                best = mind[i]
                arg = i
        if count >= n or best < min_spacing:
            break
        cur = arg
    return out[:count]


def fps_np(points, min_spacing):
    n = points.shape[0]
    mind = np.full(n, np.inf)
    out = [0]
    cur = 0
    while True:
        dx = points[:, 0] - points[cur, 0]
        dy = points[:, 1] - points[cur, 1]
        dz = points[:, 2] - points[cur, 2]
        np.minimum(mind, np.sqrt(dx * dx + dy * dy + dz * dz), out=mind)
        arg = int(np.argmax(mind))
        if len(out) >= n or mind[arg] < min_spacing:
            break
        cur = arg
        out.append(cur)
    return np.asarray(out, dtype=np.int64)


# --------------------------------------------------------------------------
# omnidirectional visibility marking (tour coverage)


@njit(cache=True)
def mark_visible_nb(occ, covered, ox, oy, radius, cos_t, sin_t, step, res):
    ny, nx = occ.shape
    n_s = int(radius / step)
    for i in range(cos_t.shape[0]):
        for j in range(1, n_s + 1):
            r = j * step
            ix = int(math.floor((ox + r * cos_t[i]) / res))
            iy = int(math.floor((oy + r * sin_t[i]) / res))
            if ix < 0 or ix >= nx or iy < 0 or iy >= ny or occ[iy, ix]:
                break
            covered[iy, ix] = True
    ix = int(math.floor(ox / res))
    iy = int(math.floor(oy / res))
    if 0 <= ix < nx and 0 <= iy < ny and not occ[iy, ix]:
        covered[iy, ix] = True


def mark_visible_np(occ, covered, ox, oy, radius, cos_t, sin_t, step, res):
    ny, nx = occ.shape
    n_s = int(radius / step)
    r = np.arange(1, n_s + 1) * step
    ix = np.floor((ox + r[None, :] * cos_t[:, None]) / res).astype(np.int64)
    iy = np.floor((oy + r[None, :] * sin_t[:, None]) / res).astype(np.int64)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    cix = np.clip(ix, 0, nx - 1)
    ciy = np.clip(iy, 0, ny - 1)
    stop = ~inside | occ[ciy, cix]
    seen = np.cumsum(stop, axis=1) == 0
    covered[ciy[seen], cix[seen]] = True
    x0 = int(math.floor(ox / res))
    y0 = int(math.floor(oy / res))
    if 0 <= x0 < nx and 0 <= y0 < ny and not occ[y0, x0]:
        covered[y0, x0] = True


# --------------------------------------------------------------------------
# dispatch

if NUMBA_ENABLED:
    cast_rays = cast_rays_nb
    segment_min = segment_min_nb
    grid_dijkstra = grid_dijkstra_nb
    grid_field = grid_field_nb
    label_components = label_components_nb
    fps = fps_nb
    mark_visible = mark_visible_nb
else:
    cast_rays = cast_rays_np
    segment_min = segment_min_np
    grid_dijkstra = grid_dijkstra_np
    grid_field = grid_field_np
    label_components = label_components_np
    fps = fps_np
    mark_visible = mark_visible_np

BACKEND = "numba" if NUMBA_ENABLED else "numpy"
