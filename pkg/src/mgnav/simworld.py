"""Deterministic synthetic 2-D world.

A scene is a grid of rooms joined by doorways, optionally cluttered with
rectangular furniture blocks. Every cell carries a latent appearance vector
(room base colour + smooth low-frequency variation + cell noise) that plays the
role of image features: nearby viewpoints see similar cells and therefore get
similar frame embeddings. Objects are point instances with category labels and
instance embeddings; the renderer emits them as detections directly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from . import kernels
from .core import Embedding, Pose, TokenGrid, normalize, wrap_angle

CATEGORIES = (
    "chair",
    "table",
    "sofa",
    "bed",
    "plant",
    "tv",
    "sink",
    "toilet",
    "lamp",
    "shelf",
    "picture",
    "cabinet",
)

SCENE_FORMAT = "mgnav-scene"
SCENE_VERSION = 1
OBJECT_SEPARATION = 0.6  # metres between object instances

WALL_CELLS = 2
DOOR_WIDTH = 1.2
CLUTTER_HALO = 0.6
# spatial frequency range (cycles/m) and amplitude of the smooth field modes
FIELD_FREQ = (0.2, 0.45)
FIELD_AMP = 2.0


@dataclass(frozen=True)
class SceneParams:
    extent_x: float = 16.0
    extent_y: float = 12.0
    object_count: int = 20
    clutter_density: float = 0.08
    seed: int = 0
    resolution: float = 0.1
    feature_dim: int = 64
    room_size: float = 5.0
    n_categories: int = len(CATEGORIES)

    def validate(self) -> None:
        if self.extent_x < 10.0 or self.extent_y < 10.0:
            raise ValueError("scene extent must be at least 10 x 10 m")
        if not 0.0 <= self.clutter_density <= 0.4:
            raise ValueError("clutter_density must lie in [0, 0.4]")
        if self.object_count < 0:
            raise ValueError("object_count must be >= 0")
        if not 1 <= self.n_categories <= len(CATEGORIES):
            raise ValueError(f"n_categories must lie in [1, {len(CATEGORIES)}]")
        if self.resolution <= 0 or self.feature_dim < 2:
            raise ValueError("bad resolution or feature_dim")


@dataclass(frozen=True)
class SensorConfig:
    fov: float = math.radians(90.0)
    max_range: float = 5.0
    n_rays: int = 48
    n_samples: int = 24
    # geometric sample spacing from just ahead of the lens: near cells weigh
    # most, as they fill most of a perspective image
    min_range: float = 0.005
    grid_size: int = 8
    grid_channels: int = 16
    patch_side: float = 4.0

    @cached_property
    def ranges(self) -> np.ndarray:
        return np.geomspace(self.min_range, self.max_range, self.n_samples)

    @cached_property
    def ray_offsets(self) -> np.ndarray:
        return np.linspace(-self.fov / 2.0, self.fov / 2.0, self.n_rays)


DEFAULT_SENSOR = SensorConfig()


@dataclass(frozen=True)
class ObjectInstance:
    id: int
    category: int
    position: np.ndarray
    embedding: Embedding

    @property
    def label(self) -> str:
        return CATEGORIES[self.category]


@dataclass(frozen=True)
class Detection:
    category: int
    embedding: Embedding
    bearing: float
    range: float
    # ground-truth id, for diagnostics only; the agent never reads it
    object_id: int = -1


@dataclass(frozen=True)
class ObservationFrame:
    pose: Pose
    frame_embedding: Embedding
    geometry_grid: TokenGrid
    detections: tuple[Detection, ...]
    local_occupancy: np.ndarray
    patch_origin: tuple[int, int]
    resolution: float

    def patch_to_world(self, iy: float, ix: float) -> tuple[float, float]:
        return ((self.patch_origin[1] + ix + 0.5) * self.resolution,
                (self.patch_origin[0] + iy + 0.5) * self.resolution)


@dataclass(frozen=True)
class TourDemonstration:
    frames: tuple[ObservationFrame, ...]
    coverage: float
    max_step: float = 0.25

    @property
    def poses(self) -> list[Pose]:
        return [f.pose for f in self.frames]


@dataclass(frozen=True, eq=False)
class Scene:
    params: SceneParams
    occupancy: np.ndarray
    appearance: np.ndarray
    room_ids: np.ndarray
    objects: tuple[ObjectInstance, ...]

    @property
    def resolution(self) -> float:
        return self.params.resolution

    @property
    def shape(self) -> tuple[int, int]:
        return self.occupancy.shape

    @cached_property
    def free(self) -> np.ndarray:
        f = ~self.occupancy
        f.setflags(write=False)
        return f

    @cached_property
    def clearance(self) -> np.ndarray:
        """Metres from each cell centre to the nearest blocked cell centre."""
        c = ndimage.distance_transform_edt(self.free) * self.resolution
        c.setflags(write=False)
        return c

    @cached_property
    def free_float(self) -> np.ndarray:
        f = self.free.astype(np.float64)
        f.setflags(write=False)
        return f

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """(iy, ix) of the cell containing (x, y)."""
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def in_bounds(self, x: float, y: float) -> bool:
        iy, ix = self.cell_of(x, y)
        return 0 <= iy < self.shape[0] and 0 <= ix < self.shape[1]

    def is_free(self, x: float, y: float) -> bool:
        if not self.in_bounds(x, y):
            return False
        iy, ix = self.cell_of(x, y)
        return bool(self.free[iy, ix])

    def clearance_at(self, x: float, y: float) -> float:
        if not self.in_bounds(x, y):
            return 0.0
        iy, ix = self.cell_of(x, y)
        return float(self.clearance[iy, ix])

    def segment_free(self, a, b, step: float | None = None) -> bool:
        step = self.resolution / 4.0 if step is None else step
        m = kernels.segment_min(
            self.free_float,
            np.array([a[0]], float), np.array([a[1]], float),
            np.array([b[0]], float), np.array([b[1]], float),
            self.resolution, step, 0, 0.0,
        )
        return bool(m[0] > 0.5)

    def with_occupancy(self, occupancy: np.ndarray) -> "Scene":
        occ = np.array(occupancy, dtype=bool)
        occ.setflags(write=False)
        return Scene(self.params, occ, self.appearance, self.room_ids, self.objects)


# --------------------------------------------------------------------------
# generation


def _grid_dims(p: SceneParams) -> tuple[int, int]:
    return int(round(p.extent_y / p.resolution)), int(round(p.extent_x / p.resolution))


def _room_bounds(p: SceneParams) -> tuple[np.ndarray, np.ndarray]:
    ny, nx = _grid_dims(p)
    nrx = max(1, int(round(p.extent_x / p.room_size)))
    nry = max(1, int(round(p.extent_y / p.room_size)))
    return (np.round(np.linspace(0, nx, nrx + 1)).astype(int),
            np.round(np.linspace(0, ny, nry + 1)).astype(int))


def _room_ids(p: SceneParams) -> np.ndarray:
    ny, nx = _grid_dims(p)
    xb, yb = _room_bounds(p)
    rx = np.clip(np.searchsorted(xb, np.arange(nx), side="right") - 1, 0, len(xb) - 2)
    ry = np.clip(np.searchsorted(yb, np.arange(ny), side="right") - 1, 0, len(yb) - 2)
    return (rx[None, :] * (len(yb) - 1) + ry[:, None]).astype(np.int32)


def appearance_field(p: SceneParams) -> np.ndarray:
    """Latent appearance vectors for every cell, a pure function of ``p``.

    Depends only on extent, resolution, feature_dim, room_size and seed, so a
    scene file can regenerate it without storing it.
    """
    ny, nx = _grid_dims(p)
    c = p.feature_dim
    rooms = _room_ids(p)
    n_rooms = int(rooms.max()) + 1
    rng = np.random.default_rng([p.seed, 0xA11])
    base = rng.standard_normal((n_rooms, c))
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    n_modes = 8
    freq = rng.uniform(FIELD_FREQ[0], FIELD_FREQ[1], n_modes)
    theta = rng.uniform(0.0, 2.0 * math.pi, n_modes)
    phase = rng.uniform(0.0, 2.0 * math.pi, n_modes)
    modes = rng.standard_normal((n_rooms, n_modes, c)) / math.sqrt(c)
    noise = rng.standard_normal((ny, nx, c)) / math.sqrt(c)

    xs = (np.arange(nx) + 0.5) * p.resolution
    ys = (np.arange(ny) + 0.5) * p.resolution
    field = base[rooms] + 0.15 * noise
    for k in range(n_modes):
        proj = (freq[k] * math.cos(theta[k])) * xs[None, :] + (freq[k] * math.sin(theta[k])) * ys[:, None]
        wave = np.cos(2.0 * math.pi * proj + phase[k])
        field += FIELD_AMP * wave[:, :, None] * modes[rooms, k]
    field /= np.linalg.norm(field, axis=2, keepdims=True)
    field.setflags(write=False)
    return field


def _layout(p: SceneParams, rng: np.random.Generator) -> np.ndarray:
    ny, nx = _grid_dims(p)
    occ = np.zeros((ny, nx), dtype=bool)
    w = WALL_CELLS
    occ[:w, :] = occ[-w:, :] = True
    occ[:, :w] = occ[:, -w:] = True
    xb, yb = _room_bounds(p)
    nrx, nry = len(xb) - 1, len(yb) - 1
    for x in xb[1:-1]:
        occ[:, x - w // 2: x - w // 2 + w] = True
    for y in yb[1:-1]:
        occ[y - w // 2: y - w // 2 + w, :] = True

    # random spanning tree over the room grid, plus a few extra doors
    rooms = [(i, j) for i in range(nrx) for j in range(nry)]
    adj = {r: [] for r in rooms}
    for i, j in rooms:
        if i + 1 < nrx:
            adj[(i, j)].append((i + 1, j))
            adj[(i + 1, j)].append((i, j))
        if j + 1 < nry:
            adj[(i, j)].append((i, j + 1))
            adj[(i, j + 1)].append((i, j))
    seen = {rooms[int(rng.integers(len(rooms)))]}
    stack = list(seen)
    doors: set[tuple] = set()
    while stack:
        cur = stack[-1]
        nbrs = [n for n in adj[cur] if n not in seen]
        if not nbrs:
            stack.pop()
            continue
        nxt = nbrs[int(rng.integers(len(nbrs)))]
        doors.add(tuple(sorted((cur, nxt))))
        seen.add(nxt)
        stack.append(nxt)
    for r in rooms:
        for n in adj[r]:
            pair = tuple(sorted((r, n)))
            if pair not in doors and rng.random() < 0.35:
                doors.add(pair)

    dw = int(round(DOOR_WIDTH / p.resolution))
    margin = int(round(0.5 / p.resolution))
    for (a, b) in sorted(doors):
        if a[0] != b[0]:  # horizontal neighbours share a vertical wall
            x = xb[max(a[0], b[0])]
            lo, hi = yb[a[1]] + w + margin, yb[a[1] + 1] - w - margin - dw
            s = int(rng.integers(lo, max(lo + 1, hi)))
            occ[s:s + dw, x - w // 2 - 1: x - w // 2 + w + 1] = False
        else:
            y = yb[max(a[1], b[1])]
            lo, hi = xb[a[0]] + w + margin, xb[a[0] + 1] - w - margin - dw
            s = int(rng.integers(lo, max(lo + 1, hi)))
            occ[y - w // 2 - 1: y - w // 2 + w + 1, s:s + dw] = False
    # re-seal the outer border in case a door cut touched it
    occ[:w, :] = occ[-w:, :] = True
    occ[:, :w] = occ[:, -w:] = True
    return occ


def _add_clutter(occ: np.ndarray, p: SceneParams, rng: np.random.Generator) -> None:
    if p.clutter_density <= 0:
        return
    res = p.resolution
    halo = int(round(CLUTTER_HALO / res))
    xb, yb = _room_bounds(p)
    # cells next to a doorway opening stay clear
    door_zone = ndimage.binary_dilation(
        _door_cells(occ, p), iterations=int(round(1.0 / res))
    )
    for i in range(len(xb) - 1):
        for j in range(len(yb) - 1):
            x0, x1, y0, y1 = xb[i], xb[i + 1], yb[j], yb[j + 1]
            room_free = int((~occ[y0:y1, x0:x1]).sum())
            target = p.clutter_density * room_free
            placed = 0
            for _ in range(300):
                if placed >= target:
                    break
                w = int(round(rng.uniform(0.3, 1.2) / res))
                h = int(round(rng.uniform(0.3, 1.2) / res))
                if x1 - x0 - w <= 0 or y1 - y0 - h <= 0:
                    continue
                cx = int(rng.integers(x0, x1 - w))
                cy = int(rng.integers(y0, y1 - h))
                ya, yz = max(0, cy - halo), min(occ.shape[0], cy + h + halo)
                xa, xz = max(0, cx - halo), min(occ.shape[1], cx + w + halo)
                if occ[ya:yz, xa:xz].any() or door_zone[cy:cy + h, cx:cx + w].any():
                    continue
                occ[cy:cy + h, cx:cx + w] = True
                placed += w * h


def _door_cells(occ: np.ndarray, p: SceneParams) -> np.ndarray:
    """Free cells lying on an interior wall line (the doorway openings)."""
    xb, yb = _room_bounds(p)
    w = WALL_CELLS
    mask = np.zeros_like(occ)
    for x in xb[1:-1]:
        mask[:, x - w // 2: x - w // 2 + w] = True
    for y in yb[1:-1]:
        mask[y - w // 2: y - w // 2 + w, :] = True
    return mask & ~occ


def is_connected(free: np.ndarray) -> bool:
    _, n = kernels.label_components(np.ascontiguousarray(free))
    return n == 1


def _place_objects(occ: np.ndarray, p: SceneParams, rng: np.random.Generator):
    c = p.feature_dim
    protos = rng.standard_normal((p.n_categories, c))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    clear = ndimage.distance_transform_edt(~occ) * p.resolution
    candidates = np.argwhere(clear >= 0.3)
    objects = []
    for k in range(p.object_count):
        # keep instances apart so no two share a viewpoint; give up after 50 draws
        for _draw in range(50):
            iy, ix = candidates[int(rng.integers(len(candidates)))]
            pos = np.array([(ix + 0.5) * p.resolution, (iy + 0.5) * p.resolution])
            if all(np.hypot(*(pos - o.position)) >= OBJECT_SEPARATION for o in objects):
                break
        pos.setflags(write=False)
        cat = int(rng.integers(p.n_categories))
        u = rng.standard_normal(c)
        emb = normalize(protos[cat] + 0.8 * u / np.linalg.norm(u))
        objects.append(ObjectInstance(k, cat, pos, emb))
    return tuple(objects)


def generate_scene(params: SceneParams | None = None, **overrides) -> Scene:
    """Build a deterministic scene from ``params`` (keyword overrides allowed).

    Layouts that leave free space disconnected are redrawn, up to 16 times.
    """
    p = replace(params or SceneParams(), **overrides)
    p.validate()
    rng = np.random.default_rng([p.seed, 0x5CE])
    for _attempt in range(16):
        occ = _layout(p, rng)
        _add_clutter(occ, p, rng)
        if is_connected(~occ):
            break
    else:
        raise RuntimeError(f"could not generate connected free space for seed {p.seed}")
    objects = _place_objects(occ, p, np.random.default_rng([p.seed, 0x0B1]))
    occ.setflags(write=False)
    rooms = _room_ids(p)
    rooms.setflags(write=False)
    return Scene(p, occ, appearance_field(p), rooms, objects)


# --------------------------------------------------------------------------
# rendering

_GEOM_PROJ_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _geometry_projection(c: int, k: int) -> np.ndarray:
    key = (c, k)
    if key not in _GEOM_PROJ_CACHE:
        g = np.random.default_rng(0x6E0).standard_normal((c, k)) * math.sqrt(2.0 / k)
        g.setflags(write=False)
        _GEOM_PROJ_CACHE[key] = g
    return _GEOM_PROJ_CACHE[key]


def _local_patch(scene: Scene, x: float, y: float, side: float):
    n = int(round(side / scene.resolution))
    iy, ix = scene.cell_of(x, y)
    iy0, ix0 = iy - n // 2, ix - n // 2
    ny, nx = scene.shape
    patch = np.ones((n, n), dtype=bool)
    ya, yz = max(0, iy0), min(ny, iy0 + n)
    xa, xz = max(0, ix0), min(nx, ix0 + n)
    if ya < yz and xa < xz:
        patch[ya - iy0: yz - iy0, xa - ix0: xz - ix0] = scene.occupancy[ya:yz, xa:xz]
    patch.setflags(write=False)
    return patch, (iy0, ix0)


def visible_objects(scene: Scene, pose: Pose, sensor: SensorConfig = DEFAULT_SENSOR):
    """(object, bearing, range) for objects in FOV, range and line of sight."""
    if not scene.objects:
        return []
    pos = np.array([o.position for o in scene.objects])
    v = pos - np.array([pose.x, pose.y])
    rng_ = np.hypot(v[:, 0], v[:, 1])
    bearing = np.arctan2(v[:, 1], v[:, 0]) - pose.yaw
    bearing = (bearing + math.pi) % (2.0 * math.pi) - math.pi
    cand = np.nonzero((rng_ <= sensor.max_range) & (np.abs(bearing) <= sensor.fov / 2.0))[0]
    if cand.size == 0:
        return []
    n = cand.size
    m = kernels.segment_min(
        scene.free_float,
        np.full(n, pose.x), np.full(n, pose.y),
        pos[cand, 0].copy(), pos[cand, 1].copy(),
        scene.resolution, scene.resolution / 4.0, 0, 0.0,
    )
    return [(scene.objects[i], float(bearing[i]), float(rng_[i]))
            for i, ok in zip(cand, m) if ok > 0.5]


def render_observation(
    scene: Scene,
    pose: Pose,
    noise_sigma: float = 0.0,
    rng: np.random.Generator | None = None,
    sensor: SensorConfig = DEFAULT_SENSOR,
) -> ObservationFrame:
    """Ray-cast the scene from ``pose`` into an observation frame.

    Random draws happen in a fixed order (frame noise, one vector per
    detection, geometry noise) and only when ``noise_sigma > 0``.
    """
    if not scene.is_free(pose.x, pose.y):
        raise ValueError(f"pose ({pose.x:.2f}, {pose.y:.2f}) is on a blocked cell")
    if noise_sigma > 0 and rng is None:
        raise ValueError("noise_sigma > 0 requires an rng")
    angles = pose.yaw + sensor.ray_offsets
    cx, cy, hit = kernels.cast_rays(
        scene.occupancy, float(pose.x), float(pose.y),
        np.cos(angles), np.sin(angles), sensor.ranges, scene.resolution,
    )
    samples = scene.appearance[cy, cx]  # (rays, samples, C)
    c = scene.params.feature_dim
    # noise is scaled against the unit-norm view mean
    frame_emb = normalize(samples.reshape(-1, c).mean(axis=0))
    if noise_sigma > 0:
        frame_emb = normalize(frame_emb + noise_sigma * rng.standard_normal(c))

    dets = []
    for obj, bearing, rng_ in visible_objects(scene, pose, sensor):
        e = obj.embedding
        if noise_sigma > 0:
            e = e + noise_sigma * rng.standard_normal(c)
        dets.append(Detection(obj.category, normalize(e), bearing, rng_, obj.id))

    grid = _geometry_grid(samples, hit, sensor, c)
    if noise_sigma > 0:
        grid = grid + noise_sigma * rng.standard_normal(grid.shape)
    patch, origin = _local_patch(scene, pose.x, pose.y, sensor.patch_side)
    return ObservationFrame(
        pose=pose,
        frame_embedding=frame_emb,
        geometry_grid=TokenGrid(grid),
        detections=tuple(dets),
        local_occupancy=patch,
        patch_origin=origin,
        resolution=scene.resolution,
    )


def _geometry_grid(samples, hit, sensor: SensorConfig, c: int) -> np.ndarray:
    g = sensor.grid_size
    n_rays, n_s = hit.shape[0], sensor.n_samples
    rpc, spr = n_rays // g, n_s // g
    wall = (np.arange(n_s)[None, :] >= hit[:, None]).astype(np.float64)
    hit_range = np.where(hit < n_s, sensor.ranges[np.minimum(hit, n_s - 1)], sensor.max_range)
    # (rows=range bands, cols=azimuth bins)
    wall_b = wall.reshape(g, rpc, g, spr).mean(axis=(1, 3)).T
    depth_c = hit_range.reshape(g, rpc).mean(axis=1) / sensor.max_range
    app = samples.reshape(g, rpc, g, spr, c).mean(axis=(1, 3)).transpose(1, 0, 2)
    proj = _geometry_projection(c, sensor.grid_channels - 2)
    out = np.empty((g, g, sensor.grid_channels))
    out[:, :, 0] = 2.0 * wall_b - 1.0
    out[:, :, 1] = (2.0 * depth_c - 1.0)[None, :]
    out[:, :, 2:] = app @ proj
    return out


# --------------------------------------------------------------------------
# tours


def _traversable(scene: Scene, clearance: float) -> np.ndarray:
    return np.ascontiguousarray(scene.clearance > clearance)


def _descend(dist: np.ndarray, target: tuple[int, int]) -> list[tuple[int, int]]:
    """Cells from the distance-field source to ``target`` (inclusive)."""
    ny, nx = dist.shape
    path = [target]
    y, x = target
    while dist[y, x] > 0:
        best = (dist[y, x], y, x)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = y + dy, x + dx
                if 0 <= yy < ny and 0 <= xx < nx and dist[yy, xx] < best[0]:
                    best = (dist[yy, xx], yy, xx)
        if (best[1], best[2]) == (y, x):
            break
        y, x = best[1], best[2]
        path.append((y, x))
    path.reverse()
    return path


def _resample(points: np.ndarray, spacing: float) -> list[np.ndarray]:
    out = []
    carry = 0.0
    for a, b in zip(points[:-1], points[1:]):
        seg = float(np.hypot(*(b - a)))
        t = spacing - carry
        while t <= seg:
            out.append(a + (b - a) * (t / seg))
            t += spacing
        carry = seg - (t - spacing)
    if len(points) and (not out or np.hypot(*(out[-1] - points[-1])) > 1e-9):
        out.append(points[-1].astype(float))
    return out


def generate_tour(
    scene: Scene,
    coverage_target: float = 0.95,
    seed: int = 0,
    *,
    noise_sigma: float = 0.02,
    lattice: float = 1.25,
    clearance: float = 0.3,
    coverage_range: float = 1.5,
    max_frames: int = 8000,
    errands: int = 12,
    sensor: SensorConfig = DEFAULT_SENSOR,
) -> TourDemonstration:
    """Posed demonstration tour covering the free space.

    The tour visits a lattice of waypoints in greedy nearest-geodesic order and
    spins in place (12 x 30 deg) at each. A free cell counts as covered once it
    is in line of sight within ``coverage_range`` of a tour position. The sweep
    ends when coverage reaches ``coverage_target``, when no waypoint can add
    coverage, or at ``max_frames``; the achieved coverage is reported.

    A sweep alone links neighbouring lanes only at their ends, so the tour then
    walks ``errands`` shortest-path legs between random waypoints, the way a
    person crosses a house repeatedly while recording.
    """
    if not 0.0 < coverage_target <= 1.0:
        raise ValueError("coverage_target must lie in (0, 1]")
    rng = np.random.default_rng([scene.params.seed, seed, 0x70])
    res = scene.resolution
    trav = _traversable(scene, clearance)
    free = scene.free
    n_free = int(free.sum())
    covered = np.zeros(scene.shape, dtype=bool)
    cos_o = np.cos(np.linspace(0, 2 * math.pi, 96, endpoint=False))
    sin_o = np.sin(np.linspace(0, 2 * math.pi, 96, endpoint=False))

    # lattice waypoints snapped to the largest traversable component
    labels, _ = kernels.label_components(trav)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    main = labels == int(np.argmax(sizes))
    step = int(round(lattice / res))
    wps = []
    for iy in range(step // 2, scene.shape[0], step):
        for ix in range(step // 2, scene.shape[1], step):
            if main[iy, ix]:
                wps.append((iy, ix))
            else:
                win = main[max(0, iy - 3): iy + 4, max(0, ix - 3): ix + 4]
                hits = np.argwhere(win)
                if len(hits):
                    wps.append((max(0, iy - 3) + int(hits[0][0]), max(0, ix - 3) + int(hits[0][1])))
    if not wps:
        raise ValueError("scene has no traversable space for a tour")
    disk_r = int(coverage_range / res)
    visited = np.zeros(len(wps), dtype=bool)

    poses: list[Pose] = []

    def mark(x, y):
        kernels.mark_visible(scene.occupancy, covered, x, y, coverage_range, cos_o, sin_o, res / 2.0, res)

    def useful(k):
        iy, ix = wps[k]
        win = free[max(0, iy - disk_r): iy + disk_r + 1, max(0, ix - disk_r): ix + disk_r + 1]
        cov = covered[max(0, iy - disk_r): iy + disk_r + 1, max(0, ix - disk_r): ix + disk_r + 1]
        return bool((win & ~cov).any())

    cur = int(rng.integers(len(wps)))
    cy, cx = wps[cur]
    pos = np.array([(cx + 0.5) * res, (cy + 0.5) * res])
    yaw = float(rng.uniform(-math.pi, math.pi))
    while True:
        visited[cur] = True
        for _ in range(12):
            yaw = wrap_angle(yaw + math.radians(30.0))
            poses.append(Pose(float(pos[0]), float(pos[1]), yaw))
        mark(pos[0], pos[1])
        if covered.sum() / n_free >= coverage_target or len(poses) >= max_frames:
            break
        dist = kernels.grid_dijkstra(trav, wps[cur][0], wps[cur][1], res)
        best, best_d = -1, np.inf
        for k in range(len(wps)):
            if visited[k]:
                continue
            d = dist[wps[k]]
            if d < best_d and useful(k):
                best, best_d = k, d
            elif not np.isfinite(d):
                visited[k] = True
        if best < 0:
            break
        cells = _descend(dist, wps[best])
        pts = np.array([[(x + 0.5) * res, (y + 0.5) * res] for y, x in cells])
        for q in _resample(pts, 0.2):
            if np.allclose(q, pos):
                continue
            d = q - pos
            yaw = math.atan2(d[1], d[0])
            pos = q
            poses.append(Pose(float(pos[0]), float(pos[1]), yaw))
            mark(pos[0], pos[1])
        cur = best
        if len(poses) >= max_frames:
            break

    def walk(cells, pos):
        pts = np.array([[(x + 0.5) * res, (y + 0.5) * res] for y, x in cells])
        for q in _resample(pts, 0.2):
            if np.allclose(q, pos):
                continue
            d = q - pos
            pos = q
            poses.append(Pose(float(pos[0]), float(pos[1]), math.atan2(d[1], d[0])))
            mark(pos[0], pos[1])
        return pos

    for _ in range(errands):
        if len(poses) >= max_frames:
            break
        dist = kernels.grid_dijkstra(trav, wps[cur][0], wps[cur][1], res)
        reach = [k for k in range(len(wps)) if k != cur and np.isfinite(dist[wps[k]])]
        if not reach:
            break
        nxt = reach[int(rng.integers(len(reach)))]
        pos = walk(_descend(dist, wps[nxt]), pos)
        cur = nxt

    frames = tuple(render_observation(scene, p, noise_sigma, rng, sensor) for p in poses[:max_frames])
    return TourDemonstration(frames, float(covered.sum() / n_free))


# --------------------------------------------------------------------------
# dynamic obstacles


def inject_obstacles(
    scene: Scene,
    count: int,
    seed: int,
    keep_clear: Iterable[Sequence[float]] = (),
    clear_radius: float = 1.0,
    inflation: float = 0.2,
) -> Scene:
    """Return a copy of ``scene`` with ``count`` extra rectangular obstacles.

    Rectangles have sides in [0.4, 1.0] m and cover only free cells. A
    placement is rejected when it disconnects free space, comes within
    ``clear_radius`` of a ``keep_clear`` point, covers an object, or cuts the
    keep-clear points off from each other in the space an agent with radius
    ``inflation`` can traverse.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return scene
    res = scene.resolution
    rng = np.random.default_rng([scene.params.seed, seed, 0x0B5])
    occ = scene.occupancy.copy()
    ny, nx = occ.shape
    keep = np.array(list(keep_clear), dtype=float).reshape(-1, 2)
    objs = np.array([o.position for o in scene.objects]).reshape(-1, 2)
    for n in range(count):
        for _attempt in range(64):
            w = int(round(rng.uniform(0.4, 1.0) / res))
            h = int(round(rng.uniform(0.4, 1.0) / res))
            ix = int(rng.integers(0, nx - w))
            iy = int(rng.integers(0, ny - h))
            if occ[iy:iy + h, ix:ix + w].any():
                continue
            lo = np.array([ix * res, iy * res])
            hi = np.array([(ix + w) * res, (iy + h) * res])
            if len(keep) and np.any(_rect_dist(keep, lo, hi) < clear_radius):
                continue
            if len(objs) and np.any(_rect_dist(objs, lo, hi) < 0.2):
                continue
            trial = occ.copy()
            trial[iy:iy + h, ix:ix + w] = True
            if not is_connected(~trial):
                continue
            if len(keep) > 1 and not _same_component(trial, keep, res, inflation):
                continue
            occ = trial
            break
        else:
            raise RuntimeError(f"could not place obstacle {n + 1} of {count} after 64 attempts")
    return scene.with_occupancy(occ)


def _rect_dist(pts: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    d = np.maximum(np.maximum(lo - pts, pts - hi), 0.0)
    return np.hypot(d[:, 0], d[:, 1])


def _same_component(occ, pts, res, inflation) -> bool:
    clear = ndimage.distance_transform_edt(~occ) * res
    labels, _ = kernels.label_components(np.ascontiguousarray(clear > inflation))
    ids = set()
    for x, y in pts:
        iy, ix = int(math.floor(y / res)), int(math.floor(x / res))
        if labels[iy, ix] == 0:
            # point itself sits in a tight spot; use the best neighbour
            win = labels[max(0, iy - 3): iy + 4, max(0, ix - 3): ix + 4]
            nz = win[win > 0]
            if nz.size == 0:
                return False
            ids.add(int(np.bincount(nz).argmax()))
        else:
            ids.add(int(labels[iy, ix]))
    return len(ids) == 1


def add_rectangles(scene: Scene, rects: Iterable[tuple[float, float, float, float]]) -> Scene:
    """Block axis-aligned rectangles ``(x0, y0, x1, y1)`` in metres (fixtures)."""
    occ = scene.occupancy.copy()
    res = scene.resolution
    for x0, y0, x1, y1 in rects:
        occ[int(round(y0 / res)): int(round(y1 / res)), int(round(x0 / res)): int(round(x1 / res))] = True
    return scene.with_occupancy(occ)


# --------------------------------------------------------------------------
# geodesic oracle


def geodesic_field(scene: Scene, a) -> np.ndarray:
    """Distances (m) from ``a`` to every cell over 8-connected free cells."""
    if not scene.is_free(a[0], a[1]):
        raise ValueError(f"point {tuple(a)} is on a blocked cell")
    iy, ix = scene.cell_of(a[0], a[1])
    return kernels.grid_dijkstra(np.ascontiguousarray(scene.free), iy, ix, scene.resolution)


def geodesic_distance(scene: Scene, a, b) -> float:
    """Shortest obstacle-avoiding path length between two free points (m)."""
    if not scene.is_free(b[0], b[1]):
        raise ValueError(f"point {tuple(b)} is on a blocked cell")
    return float(geodesic_field(scene, a)[scene.cell_of(b[0], b[1])])


# --------------------------------------------------------------------------
# persistence


def _rle(mask: np.ndarray) -> tuple[int, list[int]]:
    flat = mask.ravel().astype(np.int8)
    change = np.nonzero(np.diff(flat))[0] + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    return int(flat[0]), np.diff(bounds).tolist()


def _unrle(first: int, runs: list[int], shape) -> np.ndarray:
    vals = (np.arange(len(runs)) + first) % 2
    return np.repeat(vals.astype(bool), runs).reshape(shape)


def field_checksum(field: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(field, dtype="<f8").tobytes()).hexdigest()


def save_scene(scene: Scene, path) -> None:
    first, runs = _rle(scene.occupancy)
    doc = {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "params": asdict(scene.params),
        "shape": list(scene.shape),
        "occupancy_rle": {"first": first, "runs": runs},
        "objects": [
            {"id": o.id, "category": CATEGORIES[o.category],
             "position": [float(v) for v in o.position],
             "embedding": [float(v) for v in o.embedding]}
            for o in scene.objects
        ],
        "appearance_sha256": field_checksum(scene.appearance),
    }
    Path(path).write_text(json.dumps(doc))


def load_scene(path) -> Scene:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != SCENE_FORMAT:
        raise ValueError(f"{path}: not a scene file")
    if doc.get("version") != SCENE_VERSION:
        raise ValueError(f"{path}: unsupported scene version {doc.get('version')}")
    p = SceneParams(**doc["params"])
    field_ = appearance_field(p)
    if field_checksum(field_) != doc["appearance_sha256"]:
        raise ValueError(f"{path}: appearance checksum mismatch")
    occ = _unrle(doc["occupancy_rle"]["first"], doc["occupancy_rle"]["runs"], tuple(doc["shape"]))
    occ.setflags(write=False)
    objects = []
    for o in doc["objects"]:
        pos = np.array(o["position"], dtype=float)
        pos.setflags(write=False)
        emb = np.array(o["embedding"], dtype=float)
        emb.setflags(write=False)
        objects.append(ObjectInstance(int(o["id"]), CATEGORIES.index(o["category"]), pos, emb))
    rooms = _room_ids(p)
    rooms.setflags(write=False)
    return Scene(p, occ, field_, rooms, tuple(objects))
