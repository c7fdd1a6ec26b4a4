"""Local controller: point-goal and image-goal modes plus the geometry adapter.

The controller is a scored-candidate planner over the agent's local occupancy
patch. Displacements are expressed in the world frame; the heading delta turns
the camera toward the direction of travel, at most ``max_turn`` per step.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import kernels
from .core import (
    Pose,
    TokenGrid,
    cosine_similarity,
    flatten_tokens,
    spatial_average_pool,
    wrap_angle,
)
from .simworld import ObservationFrame

MAX_STEP = 0.25
MAX_TURN = math.radians(30.0)
_EPS = 1e-9


# --------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class Action:
    displacement: tuple[float, float]
    dyaw: float

    def __post_init__(self) -> None:
        dx, dy = self.displacement
        if not all(math.isfinite(v) for v in (dx, dy, self.dyaw)):
            raise ValueError("non-finite action")
        if math.hypot(dx, dy) > MAX_STEP + 1e-9:
            raise ValueError(f"displacement {math.hypot(dx, dy):.4f} m exceeds {MAX_STEP} m")
        if abs(self.dyaw) > MAX_TURN + 1e-12:
            raise ValueError(f"heading delta {math.degrees(self.dyaw):.2f} deg exceeds 30 deg")

    @property
    def length(self) -> float:
        return math.hypot(*self.displacement)

    def apply(self, pose: Pose) -> Pose:
        return Pose(pose.x + self.displacement[0], pose.y + self.displacement[1],
                    pose.yaw + self.dyaw, pose.z)


@dataclass(frozen=True)
class ActionChunk:
    """Up to ``H`` consecutive actions.

    ``stop_flag`` declares arrival; ``blocked`` tells the loop the agent found
    no free move at all (rotate-in-place chunk).
    """

    actions: tuple[Action, ...]
    stop_flag: bool = False
    blocked: bool = False
    mode: str = "point"

    def __len__(self) -> int:
        return len(self.actions)


def rotate_chunk(dyaw: float, n: int = 1, mode: str = "point", **kw) -> ActionChunk:
    step = max(-MAX_TURN, min(MAX_TURN, dyaw))
    return ActionChunk(tuple(Action((0.0, 0.0), step) for _ in range(n)), mode=mode, **kw)


def stop_chunk(mode: str) -> ActionChunk:
    return ActionChunk((Action((0.0, 0.0), 0.0),), stop_flag=True, mode=mode)


# --------------------------------------------------------------------------
# adapter


ADAPTER_MAGIC = b"MGNA"
ADAPTER_VERSION = 1


@dataclass(frozen=True, eq=False)
class AdapterParams:
    """Two-layer perceptron C_g -> hidden -> C_p applied token-wise."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        arrs = []
        for a in (self.w1, self.b1, self.w2, self.b2):
            a = np.array(a, dtype=np.float64)
            if not np.all(np.isfinite(a)):
                raise ValueError("adapter weights must be finite")
            a.setflags(write=False)
            arrs.append(a)
        w1, b1, w2, b2 = arrs
        if w1.ndim != 2 or w2.ndim != 2 or b1.shape != (w1.shape[1],) or \
                w2.shape[0] != w1.shape[1] or b2.shape != (w2.shape[1],):
            raise ValueError("inconsistent adapter weight shapes")
        for name, a in zip(("w1", "b1", "w2", "b2"), arrs):
            object.__setattr__(self, name, a)

    @classmethod
    def from_seed(cls, seed: int = 0, c_g: int = 16, hidden: int = 32, c_p: int = 32) -> "AdapterParams":
        rng = np.random.default_rng([seed, 0xADA])
        w1 = rng.standard_normal((c_g, hidden)) / math.sqrt(c_g)
        w2 = rng.standard_normal((hidden, c_p)) / math.sqrt(hidden)
        return cls(w1, np.zeros(hidden), w2, np.zeros(c_p), seed)

    @property
    def c_g(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @property
    def c_p(self) -> int:
        return self.w2.shape[1]

    def project(self, tokens: np.ndarray) -> np.ndarray:
        h = np.maximum(tokens @ self.w1 + self.b1, 0.0)
        return h @ self.w2 + self.b2

    def same_as(self, other: "AdapterParams") -> bool:
        return self.seed == other.seed and all(
            np.array_equal(a, b) for a, b in
            zip((self.w1, self.b1, self.w2, self.b2), (other.w1, other.b1, other.w2, other.b2)))


def save_adapter(params: AdapterParams, path) -> None:
    """Header (magic, version, C_g, hidden, C_p, seed) then float64 LE arrays."""
    head = ADAPTER_MAGIC + struct.pack("<Iqqqq", ADAPTER_VERSION, params.c_g, params.hidden,
                                       params.c_p, params.seed)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes()
                    for a in (params.w1, params.b1, params.w2, params.b2))
    Path(path).write_bytes(head + body)


def load_adapter(path) -> AdapterParams:
    raw = Path(path).read_bytes()
    hsize = 4 + struct.calcsize("<Iqqqq")
    if len(raw) < hsize or raw[:4] != ADAPTER_MAGIC:
        raise ValueError(f"{path}: not an adapter weights file")
    version, c_g, hidden, c_p, seed = struct.unpack("<Iqqqq", raw[4:hsize])
    if version != ADAPTER_VERSION:
        raise ValueError(f"{path}: unsupported adapter version {version}")
    sizes = [c_g * hidden, hidden, hidden * c_p, c_p]
    if min(c_g, hidden, c_p) < 1 or len(raw) != hsize + 8 * sum(sizes):
        raise ValueError(f"{path}: truncated or oversized adapter file")
    flat = np.frombuffer(raw, dtype="<f8", offset=hsize).astype(np.float64)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    return AdapterParams(parts[0].reshape(c_g, hidden), parts[1],
                         parts[2].reshape(hidden, c_p), parts[3], int(seed))


def geometry_fuse(obs_grid: TokenGrid, goal_grid: TokenGrid, params: AdapterParams,
                  pool_factor: int = 2) -> np.ndarray:
    """Pool, flatten and concatenate both grids, then project every token.

    Returns an ``(L_obs + L_goal, C_p)`` array; the first ``L_obs`` rows come
    from the observation.
    """
    if obs_grid.channels != goal_grid.channels:
        raise ValueError(f"channel mismatch: {obs_grid.channels} vs {goal_grid.channels}")
    if obs_grid.channels != params.c_g:
        raise ValueError(f"grids have {obs_grid.channels} channels, adapter expects {params.c_g}")
    obs_t = flatten_tokens(spatial_average_pool(obs_grid, pool_factor))
    goal_t = flatten_tokens(spatial_average_pool(goal_grid, pool_factor))
    # the projection is per token, so each half is mapped on its own; this keeps
    # identical halves bit-identical regardless of BLAS blocking
    return np.concatenate([params.project(obs_t), params.project(goal_t)], axis=0)


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.sqrt(np.sum(a * a))), float(np.sqrt(np.sum(b * b)))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return min(1.0, max(-1.0, float(np.sum((a / na) * (b / nb)))))


def goal_alignment(obs: ObservationFrame, goal: ObservationFrame,
                   params: AdapterParams | None, pool_factor: int = 2) -> float:
    """Blend of fused-token and frame-embedding similarity, floored at 0.

    ``params=None`` scores raw frame embeddings only (the no-adapter ablation).
    """
    raw = cosine_similarity(obs.frame_embedding, goal.frame_embedding)
    if params is None:
        return max(0.0, raw)
    fused = geometry_fuse(obs.geometry_grid, goal.geometry_grid, params, pool_factor)
    n = fused.shape[0] // 2
    geo = _cos(fused[:n].mean(axis=0), fused[n:].mean(axis=0))
    return max(0.0, 0.5 * geo + 0.5 * raw)


# --------------------------------------------------------------------------
# controller


@dataclass(frozen=True)
class PolicyParams:
    horizon: int = 8
    n_headings: int = 16
    step_lengths: tuple[float, ...] = (0.125, 0.25)
    inflation: float = 0.2
    clearance_pref: float = 0.45
    clearance_weight: float = 0.3
    stall_calls: int = 12
    escape_margin: float = 0.1
    escape_max_calls: int = 200
    wall_distance: float = 0.35
    theta_stop: float = 0.92
    tau_match: float = 0.8
    stop_range: float = 0.9
    # the range rule only applies to close-up goals
    stop_range_goal_max: float = 1.5
    servo_standoff: float = 0.7
    # close to the goal object, circle it (angular step, call budget) and stop
    # at the best-aligned viewpoint rather than wherever the range rule fires
    orbit_step: float = 0.35
    orbit_max_calls: int = 60
    orbit_return_tol: float = 0.15
    # calls without net angular progress before the orbit counts as blocked
    orbit_stall_calls: int = 8
    scan_period: int = 40
    pool_factor: int = 2

    def validate(self) -> None:
        if self.horizon < 1 or self.n_headings < 4:
            raise ValueError("horizon must be >= 1 and n_headings >= 4")
        if not self.step_lengths or any(not 0 < s <= MAX_STEP for s in self.step_lengths):
            raise ValueError(f"step lengths must lie in (0, {MAX_STEP}]")
        if self.inflation < 0 or self.stall_calls < 1:
            raise ValueError("inflation must be >= 0 and stall_calls >= 1")
        if not 0 < self.theta_stop <= 1 or not 0 < self.tau_match < 1:
            raise ValueError("theta_stop must lie in (0, 1] and tau_match in (0, 1)")


@dataclass
class PolicyState:
    """Per-episode controller memory (escape mode, scan bookkeeping)."""

    target_key: tuple | None = None
    best_dist: float = math.inf
    stall: int = 0
    escaping: bool = False
    escape_ref: float = math.inf
    escape_calls: int = 0
    escape_heading: float = 0.0
    escapes: int = 0
    # image-goal mode
    scan_left: int = -1
    scan_best: tuple[float, float] = (-1.0, 0.0)
    unmatched: int = 0
    last_alignment: float | None = None
    explore_heading: float | None = None
    orbit: "Orbit | None" = None
    history: list = field(default_factory=list)

    def retarget(self, key) -> None:
        if key != self.target_key:
            self.target_key = key
            self.best_dist = math.inf
            self.stall = 0
            self.escaping = False
            self.escape_calls = 0


@dataclass
class Orbit:
    """Circle around the goal object while tracking the best alignment."""

    object_id: int
    center: np.ndarray
    radius: float
    angle: float
    best: tuple[float, np.ndarray]
    swept: float = 0.0
    calls: int = 0
    direction: float = 1.0
    flipped: bool = False
    returning: bool = False
    trail: list = field(default_factory=list)  # net sweep after each call

    def reverse(self) -> None:
        self.direction, self.flipped = -self.direction, True
        self.swept = 0.0
        self.trail.clear()


class LocalMap:
    """Clearance and collision queries on an observation's occupancy patch."""

    def __init__(self, obs: ObservationFrame, inflation: float):
        self.res = obs.resolution
        self.origin = np.array([obs.patch_origin[1], obs.patch_origin[0]], float) * self.res
        free = ~obs.local_occupancy
        dist, idx = ndimage.distance_transform_edt(free, return_indices=True)
        self.clear = dist * self.res
        self.nearest = idx
        self.free = free
        self.inflation = inflation

    def local(self, xy) -> np.ndarray:
        return np.asarray(xy, float) - self.origin

    def clearance_at(self, xy) -> float:
        lx, ly = self.local(xy)
        iy, ix = int(math.floor(ly / self.res)), int(math.floor(lx / self.res))
        if 0 <= iy < self.clear.shape[0] and 0 <= ix < self.clear.shape[1]:
            return float(self.clear[iy, ix])
        return 0.0

    def seg_clearance(self, p: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """Minimum clearance along segments ``p -> ends[i]`` (start excluded)."""
        a = self.local(p)
        b = ends - self.origin
        n = len(b)
        return kernels.segment_min(
            self.clear, np.full(n, a[0]), np.full(n, a[1]),
            np.ascontiguousarray(b[:, 0]), np.ascontiguousarray(b[:, 1]),
            self.res, self.res / 4.0, 1, 0.0,
        )

    def allowed(self, p: np.ndarray, ends: np.ndarray) -> np.ndarray:
        """Collision-free under inflation; near a wall, moves may not get closer."""
        c0 = self.clearance_at(p)
        need = min(self.inflation, c0) if c0 > 0 else 0.0
        m = self.seg_clearance(p, ends)
        return (m > 0.0) & (m >= need - _EPS)

    def cost_to_go(self, p: np.ndarray, target: np.ndarray, seed_radius: float = 0.5) -> "CostField":
        """Geodesic distance to ``target`` through the inflated free space.

        Cells near the target and the patch border are seeded with their
        straight-line distance to it, so unseen space counts as open.
        """
        c0 = self.clearance_at(p)
        thr = min(self.inflation, c0) - _EPS if c0 > 0 else 0.0
        passable = self.free & (self.clear >= thr)
        ny, nx = passable.shape
        cy = (np.arange(ny) + 0.5) * self.res
        cx = (np.arange(nx) + 0.5) * self.res
        t = self.local(target)
        eu = np.hypot(cx[None, :] - t[0], cy[:, None] - t[1])
        border = np.zeros_like(passable)
        border[0, :] = border[-1, :] = border[:, 0] = border[:, -1] = True
        seed = np.where(border | (eu <= seed_radius), eu, np.inf)
        return CostField(self, kernels.grid_field(passable, seed, self.res), target)

    def nearest_obstacle(self, p) -> np.ndarray | None:
        lx, ly = self.local(p)
        iy, ix = int(math.floor(ly / self.res)), int(math.floor(lx / self.res))
        if not (0 <= iy < self.free.shape[0] and 0 <= ix < self.free.shape[1]):
            return None
        oy, ox = self.nearest[0][iy, ix], self.nearest[1][iy, ix]
        if self.free[oy, ox]:
            return None
        return self.origin + (np.array([ox, oy]) + 0.5) * self.res


class CostField:
    """Cell distance field with a sub-cell lookup (min over the 3x3 block)."""

    def __init__(self, lmap: LocalMap, phi: np.ndarray, target: np.ndarray):
        self.lmap = lmap
        self.phi = phi
        self.target = np.asarray(target, float)

    def __call__(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        loc = pts - self.lmap.origin
        res = self.lmap.res
        ny, nx = self.phi.shape
        iy = np.floor(loc[:, 1] / res).astype(np.int64)
        ix = np.floor(loc[:, 0] / res).astype(np.int64)
        out = np.full(len(pts), np.inf)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                yy, xx = iy + dy, ix + dx
                ok = (yy >= 0) & (yy < ny) & (xx >= 0) & (xx < nx)
                v = np.full(len(pts), np.inf)
                v[ok] = self.phi[yy[ok], xx[ok]]
                cxy = np.stack([(xx + 0.5) * res, (yy + 0.5) * res], axis=1)
                out = np.minimum(out, v + np.hypot(*(loc - cxy).T))
        # off the patch (or cut off from it) fall back to straight-line distance
        eu = np.hypot(*(pts - self.target).T)
        return np.where(np.isfinite(out), out, eu)


def _turn_toward(yaw: float, heading: float) -> float:
    return max(-MAX_TURN, min(MAX_TURN, wrap_angle(heading - yaw)))


def _moves(headings: np.ndarray, lengths) -> tuple[np.ndarray, np.ndarray]:
    h = np.repeat(headings, len(lengths))
    l = np.tile(np.asarray(lengths, float), len(headings))
    return np.stack([l * np.cos(h), l * np.sin(h)], axis=1), h


def _any_free_move(lmap: LocalMap, p: np.ndarray, params: PolicyParams) -> bool:
    heads = np.arange(params.n_headings) * (2.0 * math.pi / params.n_headings)
    d, _ = _moves(heads, params.step_lengths)
    return bool(lmap.allowed(p, p + d).any())


def _greedy_rollout(lmap: LocalMap, pose: Pose, target: np.ndarray, params: PolicyParams,
                    mode: str, field: CostField | None = None) -> tuple[list[Action], bool]:
    """Receding simulation on the patch; returns (actions, made_progress).

    Progress is measured on ``field`` (straight-line distance when omitted).
    """
    p = pose.xy
    yaw = pose.yaw
    acts: list[Action] = []
    progressed = False
    cost = field if field is not None else (lambda q: np.hypot(*(np.atleast_2d(q) - target).T))
    for h in range(params.horizon):
        to = target - p
        dist = float(np.hypot(*to))
        if dist < 1e-6:
            break
        here = float(cost(p)[0])
        base = math.atan2(to[1], to[0])
        heads = base + np.arange(params.n_headings) * (2.0 * math.pi / params.n_headings)
        d, hd = _moves(heads, params.step_lengths)
        # never step past the target
        lens = np.hypot(d[:, 0], d[:, 1])
        d = d * (np.minimum(lens, dist) / lens)[:, None]
        ends = p + d
        ok = lmap.allowed(p, ends)
        if not ok.any():
            break
        clear = lmap.seg_clearance(p, ends)
        prog = here - cost(ends)
        score = prog - params.clearance_weight * np.maximum(0.0, params.clearance_pref - clear)
        score = np.where(ok, score, -np.inf)
        k = int(np.argmax(score))
        if prog[k] <= 1e-6 and h > 0:
            break
        if prog[k] > 1e-6:
            progressed = True
        heading = float(hd[k])
        act = Action((float(d[k, 0]), float(d[k, 1])), _turn_toward(yaw, heading))
        acts.append(act)
        p = ends[k]
        yaw = wrap_angle(yaw + act.dyaw)
        if prog[k] <= 1e-6:
            break
    return acts, progressed


def _wall_follow(lmap: LocalMap, pose: Pose, state: PolicyState, params: PolicyParams) -> list[Action]:
    """One step along the boundary, keeping the nearest obstacle on the right."""
    p = pose.xy
    obst = lmap.nearest_obstacle(p)
    theta = state.escape_heading
    if obst is not None:
        v = obst - p
        dist = float(np.hypot(*v))
        if dist < 1.0:
            to_wall = math.atan2(v[1], v[0])
            # tangent with the wall on the right, bent toward/away to hold distance
            bend = max(-0.6, min(0.6, 2.0 * (dist - params.wall_distance)))
            theta = to_wall + math.pi / 2.0 - bend
        else:
            theta = theta - math.radians(20.0)
    else:
        theta = theta - math.radians(20.0)
    n = params.n_headings
    heads = theta + np.arange(n) * (2.0 * math.pi / n)
    d, hd = _moves(heads, (MAX_STEP, MAX_STEP / 2.0))
    ok = lmap.allowed(p, p + d)
    if not ok.any():
        return []
    k = int(np.argmax(ok))  # first free direction sweeping counter-clockwise
    state.escape_heading = float(hd[k])
    return [Action((float(d[k, 0]), float(d[k, 1])), _turn_toward(pose.yaw, float(hd[k])))]


def act_point_goal(obs: ObservationFrame, target, params: PolicyParams | None = None,
                   state: PolicyState | None = None, mode: str = "point") -> ActionChunk:
    """Drive toward a world-frame 2-D target while avoiding local obstacles."""
    params = params or PolicyParams()
    state = state if state is not None else PolicyState()
    target = np.asarray(target, dtype=np.float64)[:2]
    if not np.all(np.isfinite(target)):
        raise ValueError("target must be finite")
    state.retarget((mode, round(float(target[0]), 6), round(float(target[1]), 6)))
    if mode == "point":
        # the loop took the agent off the goal object; a later orbit starts afresh
        state.orbit = None
    lmap = LocalMap(obs, params.inflation)
    p = obs.pose.xy
    if not _any_free_move(lmap, p, params):
        return rotate_chunk(MAX_TURN, mode=mode, blocked=True)

    field = lmap.cost_to_go(p, target)
    dist = float(field(p)[0])
    if dist < state.best_dist - 0.02:
        state.best_dist = dist
        state.stall = 0
    else:
        state.stall += 1

    if state.escaping:
        state.escape_calls += 1
        if dist < state.escape_ref - params.escape_margin or state.escape_calls > params.escape_max_calls:
            state.escaping = False
            state.best_dist = dist
            state.stall = 0
    elif state.stall >= params.stall_calls:
        state.escaping = True
        state.escapes += 1
        state.escape_ref = state.best_dist
        state.escape_calls = 0
        state.escape_heading = math.atan2(target[1] - p[1], target[0] - p[0])

    if state.escaping:
        acts = _wall_follow(lmap, obs.pose, state, params)
        if acts:
            return ActionChunk(tuple(acts), mode=mode)
        return rotate_chunk(MAX_TURN, mode=mode, blocked=True)

    acts, _ = _greedy_rollout(lmap, obs.pose, target, params, mode, field)
    if not acts:
        return rotate_chunk(MAX_TURN, mode=mode)
    return ActionChunk(tuple(acts), mode=mode)


# --------------------------------------------------------------------------
# image-goal mode


def match_goal_detection(obs: ObservationFrame, goal: ObservationFrame, tau: float):
    """Best (similarity, obs detection, goal detection) above ``tau``, or None."""
    best = None
    for gd in goal.detections:
        for od in obs.detections:
            if od.category != gd.category:
                continue
            s = cosine_similarity(od.embedding, gd.embedding)
            if s > tau and (best is None or s > best[0]):
                best = (s, od, gd)
    return best


def act_image_goal(obs: ObservationFrame, goal: ObservationFrame, params: AdapterParams | None,
                   policy: PolicyParams | None = None, state: PolicyState | None = None) -> ActionChunk:
    """Steer toward the goal view; ``params=None`` scores raw embeddings only."""
    policy = policy or PolicyParams()
    state = state if state is not None else PolicyState()
    mode = "image"
    align = goal_alignment(obs, goal, params, policy.pool_factor)
    if align >= policy.theta_stop:
        return stop_chunk(mode)

    lmap = LocalMap(obs, policy.inflation)
    p = obs.pose.xy
    if not _any_free_move(lmap, p, policy):
        return rotate_chunk(MAX_TURN, mode=mode, blocked=True)

    if state.orbit is not None:
        return _orbit_step(lmap, obs, align, policy, state)

    m = match_goal_detection(obs, goal, policy.tau_match)
    prev_align = state.last_alignment
    state.last_alignment = align
    if m is not None:
        _, od, gd = m
        state.unmatched = 0
        state.scan_left = 0
        primary = gd is min(goal.detections, key=lambda d: d.range)
        if primary and gd.range <= policy.stop_range_goal_max and od.range <= policy.stop_range:
            b = obs.pose.yaw + od.bearing
            center = p + od.range * np.array([math.cos(b), math.sin(b)])
            rel = p - center
            state.orbit = Orbit(od.object_id, center,
                                min(max(gd.range, 0.4), policy.stop_range),
                                math.atan2(rel[1], rel[0]), (align, p.copy()))
            return _orbit_step(lmap, obs, align, policy, state)
        bearing = obs.pose.yaw + od.bearing
        u = np.array([math.cos(bearing), math.sin(bearing)])
        standoff = min(gd.range, policy.servo_standoff)
        if od.range > standoff + 0.05:
            state.explore_heading = None
            acts, _ = _greedy_rollout(lmap, obs.pose, p + (od.range - standoff) * u, policy, mode)
            if acts:
                # keep the object in view while closing in
                return ActionChunk((Action(acts[0].displacement, _turn_toward(obs.pose.yaw, bearing)),),
                                   mode=mode)
        # at the standoff (or boxed in): fall back to the alignment gradient
    else:
        state.unmatched += 1
    # rotate-and-rescore: a full turn on entry and periodically while unmatched
    if m is None and (state.scan_left < 0 or
                      (state.scan_left == 0 and state.unmatched % policy.scan_period == 0)):
        state.scan_left = int(round(2.0 * math.pi / MAX_TURN))
        state.scan_best = (-1.0, obs.pose.yaw)
    if state.scan_left > 0:
        if align > state.scan_best[0]:
            state.scan_best = (align, obs.pose.yaw)
        state.scan_left -= 1
        if state.scan_left == 0:
            state.explore_heading = state.scan_best[1]
            state.last_alignment = None
        return rotate_chunk(MAX_TURN, mode=mode)

    # finite-difference alignment gradient across consecutive frames
    heading = state.explore_heading if state.explore_heading is not None else obs.pose.yaw
    if prev_align is not None and align < prev_align - 1e-6:
        heading = wrap_angle(heading + math.radians(120.0))
    state.explore_heading = heading
    aim = p + 2.0 * np.array([math.cos(heading), math.sin(heading)])
    acts, _ = _greedy_rollout(lmap, obs.pose, aim, policy, mode)
    if not acts:
        state.explore_heading = wrap_angle(heading + math.pi / 2.0)
        return rotate_chunk(MAX_TURN, mode=mode)
    return ActionChunk((acts[0],), mode=mode)


def _orbit_step(lmap: LocalMap, obs: ObservationFrame, align: float, policy: PolicyParams,
                state: PolicyState) -> ActionChunk:
    orb = state.orbit
    p = obs.pose.xy
    mode = "image"
    orb.calls += 1
    if align > orb.best[0]:
        orb.best = (align, p.copy())
    rel = p - orb.center
    ang = math.atan2(rel[1], rel[0])
    # net progress only: shuffling back and forth against an obstacle is no sweep
    orb.swept += wrap_angle(ang - orb.angle) * orb.direction
    orb.angle = ang
    orb.trail.append(orb.swept)
    k = policy.orbit_stall_calls
    stalled = len(orb.trail) > k and orb.swept - orb.trail[-1 - k] < 0.2
    if orb.swept >= 2.0 * math.pi or orb.calls > policy.orbit_max_calls:
        orb.returning = True
    elif stalled and not orb.returning:
        if orb.flipped:
            orb.returning = True
        else:
            orb.reverse()
    face = math.atan2(orb.center[1] - p[1], orb.center[0] - p[0])

    if orb.returning:
        goal_xy = orb.best[1]
        if np.hypot(*(goal_xy - p)) <= policy.orbit_return_tol or orb.calls > 2 * policy.orbit_max_calls:
            return stop_chunk(mode)
    else:
        a = ang + orb.direction * policy.orbit_step
        goal_xy = orb.center + orb.radius * np.array([math.cos(a), math.sin(a)])
    acts, _ = _greedy_rollout(lmap, obs.pose, goal_xy, policy, mode)
    if not acts:
        if orb.returning:
            return stop_chunk(mode)
        if not orb.flipped:
            orb.reverse()
        else:
            orb.returning = True
        return rotate_chunk(_turn_toward(obs.pose.yaw, face), mode=mode)
    # keep the object in view so the alignment stays meaningful
    return ActionChunk((Action(acts[0].displacement, _turn_toward(obs.pose.yaw, face)),), mode=mode)
