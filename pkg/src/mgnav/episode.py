"""Dual-rate navigation loop, SR/SPL metrics and the benchmark harness."""

from __future__ import annotations

import json
import math
import multiprocessing as mp
import os
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from . import simworld as sw
from .core import Pose
from .planner import BlockedEdges, NodePath, PathUnreachable, edge_key, plan_path
from .policy import (
    ActionChunk,
    AdapterParams,
    PolicyParams,
    PolicyState,
    act_image_goal,
    act_point_goal,
)
from .retrieval import confidence, localize
from .smg import GraphParams, MemoryGraph, build_graph

GOAL_KINDS = ("image", "instance")
TERMINATIONS = ("stop", "step_cap", "stuck", "unreachable", "setup_error")


@dataclass(frozen=True)
class LoopParams:
    t_global: int = 40
    t_local: int = 1
    theta_c: float = 0.35
    # steps that must pass after a re-localisation before a confidence drop
    # may trigger another one
    conf_min_gap: int = 5
    stuck_window: int = 60
    stuck_progress: float = 0.1
    n_cand: int = 5
    retrieval_mode: str = "hybrid"
    obs_noise: float = 0.02
    # arrival slack when the node centre itself is now occupied
    occupied_center_slack: float = 0.6
    # re-localisation only ranks nodes within loc_gate * d of the odometry
    # position; 0 searches the whole graph
    loc_gate: float = 2.0

    def validate(self) -> None:
        if self.t_global < 1 or self.t_local < 1:
            raise ValueError("t_global and t_local must be >= 1")
        if not 0.0 <= self.theta_c <= 1.0:
            raise ValueError("theta_c must lie in [0, 1]")
        if self.stuck_window < 1 or self.n_cand < 1:
            raise ValueError("stuck_window and n_cand must be >= 1")
        if self.retrieval_mode not in ("hybrid", "keyframe", "object"):
            raise ValueError(f"unknown retrieval mode {self.retrieval_mode!r}")
        if self.obs_noise < 0:
            raise ValueError("obs_noise must be >= 0")


@dataclass(frozen=True)
class EpisodeSpec:
    spec_id: str
    scene_seed: int
    start: Pose
    goal: Pose
    goal_kind: str = "instance"
    target_object: int = -1
    seed: int = 0
    max_steps: int = 500
    success_radius: float = 1.0

    def validate(self, scene: sw.Scene) -> None:
        if self.goal_kind not in GOAL_KINDS:
            raise ValueError(f"unknown goal kind {self.goal_kind!r}")
        if self.max_steps < 1 or self.success_radius <= 0:
            raise ValueError("max_steps must be >= 1 and success_radius > 0")
        for name, p in (("start", self.start), ("goal", self.goal)):
            if not scene.is_free(p.x, p.y):
                raise ValueError(f"{self.spec_id}: {name} pose is not on free space")
        if not math.isfinite(sw.geodesic_distance(scene, self.start.xy, self.goal.xy)):
            raise ValueError(f"{self.spec_id}: goal unreachable from start")
        if self.goal_kind == "instance" and not 0 <= self.target_object < len(scene.objects):
            raise ValueError(f"{self.spec_id}: target object {self.target_object} not in scene")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["start"] = [self.start.x, self.start.y, self.start.yaw]
        d["goal"] = [self.goal.x, self.goal.y, self.goal.yaw]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeSpec":
        d = dict(d)
        d["start"] = Pose(*d["start"])
        d["goal"] = Pose(*d["goal"])
        return cls(**d)


@dataclass
class EpisodeResult:
    spec_id: str
    seed: int
    success: bool
    steps: int
    path_length: float
    geodesic: float
    termination: str
    final_distance: float
    trajectory: list = field(default_factory=list)
    events: list = field(default_factory=list)
    calls: list = field(default_factory=list)  # (step, mode, cursor, K)

    def event_counts(self) -> dict:
        c = Counter(e["kind"] for e in self.events)
        return {k: c[k] for k in sorted(c)}

    def to_record(self) -> dict:
        return {
            "spec_id": self.spec_id,
            "seed": self.seed,
            "success": self.success,
            "steps": self.steps,
            "p": self.path_length,
            "l": self.geodesic,
            "termination": self.termination,
            "final_distance": self.final_distance,
            "events": self.event_counts(),
        }


# --------------------------------------------------------------------------
# metrics


def spl_ratio(success: bool, p: float, l: float) -> float:
    if not success:
        return 0.0
    if l <= 0.0:
        return 1.0
    return l / max(p, l)


def compute_metrics(results: Sequence) -> tuple[float, float]:
    """(SR, SPL). Accepts EpisodeResult objects or (success, p, l) triples."""
    if len(results) == 0:
        raise ValueError("compute_metrics needs at least one result")
    rows = []
    for r in results:
        if isinstance(r, EpisodeResult):
            rows.append((r.success, r.path_length, r.geodesic))
        else:
            rows.append(tuple(r))
    for s, p, l in rows:
        if not (math.isfinite(p) and math.isfinite(l)):
            raise ValueError("path lengths must be finite")
    sr = sum(1.0 for s, _, _ in rows if s) / len(rows)
    spl = sum(spl_ratio(bool(s), p, l) for s, p, l in rows) / len(rows)
    return sr, spl


# --------------------------------------------------------------------------
# the loop


class _Loop:
    """Mutable state of one episode; the agent never reads ground truth."""

    def __init__(self, spec, graph, adapter, scene, loop, policy):
        self.spec = spec
        self.graph = graph
        self.adapter = adapter
        self.scene = scene
        self.loop = loop
        self.policy = policy
        self.events: list[dict] = []
        self.calls: list[tuple] = []
        self.blocked = BlockedEdges(4 * loop.t_global)
        self.path: NodePath | None = None
        self.goal_node: int | None = None
        self.last_reloc = -10**9
        self.signal: str | None = None
        self.pstate = PolicyState()
        self.best_target = math.inf
        self.best_step = 0

    def log(self, step: int, kind: str, **kw) -> None:
        self.events.append({"step": step, "kind": kind, **kw})

    def _center(self, nid: int) -> np.ndarray:
        return self.graph.node(nid).center[:2]

    def nearby(self, obs) -> list[int] | None:
        """Nodes within the odometry gate, or None when none qualify.

        Nodes whose centre is hidden behind a wall of the local patch are
        dropped unless that would empty the gate.
        """
        if self.loop.loc_gate <= 0:
            return None
        gate = self.loop.loc_gate * self.graph.params.d
        d = np.hypot(*(self.graph.centers[:, :2] - obs.pose.xy).T)
        ids = [int(i) for i in np.nonzero(d <= gate)[0]]
        seen = [i for i in ids if self._los(obs, self._center(i), open_outside=True)]
        return seen or ids or None

    def relocalize(self, step: int, obs, trigger: str) -> bool:
        res = localize(obs, self.graph, self.loop.n_cand, self.loop.retrieval_mode,
                       self.nearby(obs))
        self.last_reloc = step
        self.log(step, "localize", trigger=trigger, node=res.node_id)
        prev_target = self.path.target if self.path is not None else None
        try:
            path = plan_path(self.graph, res.node_id, self.goal_node, self.blocked.active(step), "goal")
        except PathUnreachable:
            # blocked edges are soft evidence; drop them before giving up
            self.blocked.clear()
            self.log(step, "unblock")
            try:
                path = plan_path(self.graph, res.node_id, self.goal_node, (), "goal")
            except PathUnreachable:
                self.log(step, "unreachable")
                return False
        self.log(step, "plan", nodes=list(path.node_ids))
        p = obs.pose.xy
        ids = path.node_ids
        if len(ids) >= 2:
            # skip v1 when the agent is already on its way to v2
            c1, c2 = self._center(ids[0]), self._center(ids[1])
            if np.hypot(*(p - c2)) <= np.hypot(*(c1 - c2)) and self._los(obs, c2):
                path.cursor = 1
        if trigger in ("period", "confidence") and prev_target in ids[path.cursor + 1:]:
            # the new route still runs through the old waypoint: keep heading there
            # instead of walking back to whichever node the current view matched
            path.cursor = ids.index(prev_target)
        self.path = path
        if path.target != prev_target:
            self._reset_progress(step)
        self.advance(step, obs)
        return True

    def _los(self, obs, xy, open_outside: bool = False) -> bool:
        lmap_occ = obs.local_occupancy
        res = obs.resolution
        o = np.array([obs.patch_origin[1], obs.patch_origin[0]], float) * res
        a, b = obs.pose.xy - o, np.asarray(xy, float) - o
        n = int(math.ceil(np.hypot(*(b - a)) / (res / 4.0))) + 1
        for t in np.linspace(0.0, 1.0, n):
            q = a + t * (b - a)
            iy, ix = int(math.floor(q[1] / res)), int(math.floor(q[0] / res))
            if not (0 <= iy < lmap_occ.shape[0] and 0 <= ix < lmap_occ.shape[1]):
                return open_outside
            if lmap_occ[iy, ix]:
                return False
        return True

    def _reset_progress(self, step: int) -> None:
        self.best_target = math.inf
        self.best_step = step

    def _center_occupied(self, obs, xy) -> bool:
        res = obs.resolution
        iy = int(math.floor(xy[1] / res)) - obs.patch_origin[0]
        ix = int(math.floor(xy[0] / res)) - obs.patch_origin[1]
        occ = obs.local_occupancy
        return 0 <= iy < occ.shape[0] and 0 <= ix < occ.shape[1] and bool(occ[iy, ix])

    def advance(self, step: int, obs) -> None:
        r = self.graph.params.r
        while self.path is not None and not self.path.at_goal:
            c = self._center(self.path.target)
            d = float(np.hypot(*(obs.pose.xy - c)))
            if d <= r or (d <= r + self.loop.occupied_center_slack and self._center_occupied(obs, c)):
                self.path.cursor += 1
                self.log(step, "advance", cursor=self.path.cursor, K=self.path.K)
                self._reset_progress(step)
            else:
                break

    def current_edge(self) -> tuple[int, int] | None:
        if self.path is None or self.path.at_goal:
            return None
        prev = self.path.previous
        if prev is None:
            return None
        return edge_key(prev, self.path.target)


def _apply_chunk(scene, pose, chunk: ActionChunk, n: int):
    """Execute up to ``n`` actions; returns (pose, length, steps, collided)."""
    length = 0.0
    steps = 0
    for act in chunk.actions[:n]:
        nxt = act.apply(pose)
        if act.length > 0 and not (scene.is_free(nxt.x, nxt.y) and scene.segment_free(pose.xy, nxt.xy)):
            return pose, length, steps, True
        length += act.length
        pose = nxt
        steps += 1
    return pose, length, steps, False


def run_episode(
    spec: EpisodeSpec,
    graph: MemoryGraph | None,
    adapter: AdapterParams | None,
    scene: sw.Scene,
    loop: LoopParams | None = None,
    policy: PolicyParams | None = None,
    *,
    policy_only: bool = False,
    record_trajectory: bool = True,
) -> EpisodeResult:
    """Run one episode on ``scene`` (which may carry run-time obstacles).

    ``graph=None`` together with ``policy_only`` drives the image-goal policy
    from the first step. ``adapter=None`` scores alignment on raw embeddings.
    """
    loop = loop or LoopParams()
    policy = policy or PolicyParams()
    spec.validate(scene)
    if graph is None and not policy_only:
        raise ValueError("a graph is required unless policy_only is set")
    rng = np.random.default_rng([spec.scene_seed, spec.seed, 0xE9])
    goal_obs = sw.render_observation(scene, spec.goal, loop.obs_noise, rng)
    geo = sw.geodesic_distance(scene, spec.start.xy, spec.goal.xy)

    st = _Loop(spec, graph, adapter, scene, loop, policy)
    pose = spec.start
    traj = [pose]
    p_len = 0.0
    step = 0
    termination = "step_cap"
    stopped = False
    window: list[np.ndarray] = [pose.xy]
    n_escapes = 0

    if not policy_only:
        gres = localize(goal_obs, graph, loop.n_cand, loop.retrieval_mode)
        st.goal_node = gres.node_id
        st.log(0, "goal", node=gres.node_id)

    while step < spec.max_steps:
        obs = sw.render_observation(scene, pose, loop.obs_noise, rng)
        if not policy_only:
            trigger = None
            if st.path is None:
                trigger = "init"
            elif step - st.last_reloc >= loop.t_global:
                trigger = "period"
            elif st.signal is not None:
                trigger = st.signal
            elif (not st.path.at_goal and step - st.last_reloc >= loop.conf_min_gap
                  and confidence(obs, graph.node(st.path.target)) < loop.theta_c):
                trigger = "confidence"
            st.signal = None
            if trigger is not None and not st.relocalize(step, obs, trigger):
                termination = "unreachable"
                break
            st.advance(step, obs)

        if policy_only or st.path.at_goal:
            K = st.path.K if st.path is not None else 1
            cursor = st.path.cursor if st.path is not None else 0
            st.calls.append((step, "image", cursor, K))
            chunk = act_image_goal(obs, goal_obs, adapter, policy, st.pstate)
        else:
            target = st.path.target
            st.calls.append((step, "point", st.path.cursor, st.path.K))
            chunk = act_point_goal(obs, st._center(target), policy, st.pstate)
            d = float(np.hypot(*(pose.xy - st._center(target))))
            if d < st.best_target - loop.stuck_progress:
                st.best_target, st.best_step = d, step
            elif step - st.best_step >= loop.stuck_window:
                st.signal = "blocked"
                edge = st.current_edge()
                if edge is not None:
                    st.blocked.mark(edge, step)
                st.log(step, "stuck", edge=list(edge) if edge else None)
                st._reset_progress(step)

        if chunk.stop_flag:
            stopped = True
            termination = "stop"
            st.log(step, "stop")
            break
        if chunk.blocked and not policy_only:
            edge = st.current_edge()
            if edge is not None:
                st.blocked.mark(edge, step)
            st.signal = "blocked"
            st.log(step, "blocked", edge=list(edge) if edge else None)

        n_exec = min(loop.t_local, spec.max_steps - step)
        pose, dl, n_done, collided = _apply_chunk(scene, pose, chunk, n_exec)
        p_len += dl
        step += max(1, n_done)
        if record_trajectory:
            traj.append(pose)
        window.append(pose.xy)
        if len(window) > loop.stuck_window + 1:
            window.pop(0)
        if collided:
            edge = st.current_edge()
            if edge is not None and not policy_only:
                st.blocked.mark(edge, step)
                st.signal = "blocked"
            st.log(step, "collision", edge=list(edge) if edge else None)
        if st.pstate.escapes > n_escapes:
            n_escapes = st.pstate.escapes
            st.log(step, "escape")

    if termination == "step_cap" and float(np.hypot(*(window[-1] - window[0]))) < 0.5:
        termination = "stuck"
    final = float(np.hypot(*(pose.xy - spec.goal.xy)))
    success = stopped and final <= spec.success_radius
    return EpisodeResult(
        spec_id=spec.spec_id, seed=spec.seed, success=success, steps=step,
        path_length=p_len, geodesic=geo, termination=termination, final_distance=final,
        trajectory=traj if record_trajectory else [], events=st.events, calls=st.calls,
    )


# --------------------------------------------------------------------------
# suite generation


def _instance_goal(scene: sw.Scene, obj, rng) -> Pose | None:
    ox, oy = float(obj.position[0]), float(obj.position[1])
    for _ in range(200):
        d = rng.uniform(0.5, 1.0)
        a = rng.uniform(-math.pi, math.pi)
        x, y = ox + d * math.cos(a), oy + d * math.sin(a)
        if scene.clearance_at(x, y) < 0.25:
            continue
        pose = Pose(x, y, math.atan2(oy - y, ox - x))
        if any(o.id == obj.id for o, _, _ in sw.visible_objects(scene, pose)):
            return pose
    return None


def sample_episodes(scene: sw.Scene, scene_seed: int, n: int, *, goal_kind: str = "instance",
                    min_geodesic: float = 4.0, max_steps: int = 500,
                    success_radius: float = 1.0) -> list[EpisodeSpec]:
    """Seeded start/goal pairs; starts lie at least ``min_geodesic`` from goals."""
    if goal_kind not in GOAL_KINDS:
        raise ValueError(f"unknown goal kind {goal_kind!r}")
    labels, _ = sw.kernels.label_components(np.ascontiguousarray(scene.clearance >= 0.3))
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    main = labels == int(np.argmax(sizes))
    cells = np.argwhere(main)
    res = scene.resolution
    specs = []
    for i in range(n):
        rng = np.random.default_rng([scene_seed, i, 0x5EED])
        for _attempt in range(100):
            target = -1
            if goal_kind == "instance":
                obj = scene.objects[int(rng.integers(len(scene.objects)))]
                goal = _instance_goal(scene, obj, rng)
                target = obj.id
            else:
                cy, cx = cells[int(rng.integers(len(cells)))]
                goal = Pose((cx + 0.5) * res, (cy + 0.5) * res, rng.uniform(-math.pi, math.pi))
            if goal is None:
                continue
            field_ = sw.geodesic_field(scene, goal.xy)
            gd = field_[cells[:, 0], cells[:, 1]]
            ok = np.nonzero(np.isfinite(gd) & (gd >= min_geodesic))[0]
            if ok.size == 0:
                continue
            cy, cx = cells[ok[int(rng.integers(ok.size))]]
            start = Pose((cx + 0.5) * res, (cy + 0.5) * res, rng.uniform(-math.pi, math.pi))
            specs.append(EpisodeSpec(f"s{scene_seed:03d}-e{i:02d}", scene_seed, start, goal,
                                     goal_kind, target, i, max_steps, success_radius))
            break
        else:
            raise RuntimeError(f"could not sample episode {i} on scene {scene_seed}")
    return specs


# --------------------------------------------------------------------------
# benchmark harness


@dataclass(frozen=True)
class Variant:
    """One row of a results table."""

    name: str
    policy_only: bool = False
    use_adapter: bool = True
    retrieval_mode: str = "hybrid"
    d: float = 1.0
    r: float = 0.5
    obstacles: int = 0


PRESETS: dict[str, tuple[Variant, ...]] = {
    "component": (
        Variant("policy-only", policy_only=True),
        Variant("graph", use_adapter=False),
        Variant("graph+adapter"),
    ),
    "retrieval": (
        Variant("keyframe", retrieval_mode="keyframe"),
        Variant("object", retrieval_mode="object"),
        Variant("hybrid"),
    ),
    "sparsity": (
        Variant("d2.0-r1.0", d=2.0, r=1.0),
        Variant("d1.5-r0.8", d=1.5, r=0.8),
        Variant("d1.0-r0.5", d=1.0, r=0.5),
    ),
    "robustness": (
        Variant("obstacles-0", obstacles=0),
        Variant("obstacles-5", obstacles=5),
        Variant("obstacles-10", obstacles=10),
    ),
}


@dataclass(frozen=True)
class SuiteConfig:
    scene_seeds: tuple[int, ...] = tuple(range(20))
    episodes_per_scene: int = 5
    goal_kind: str = "instance"
    min_geodesic: float = 4.0
    max_steps: int = 500
    success_radius: float = 1.0
    coverage: float = 0.95
    tour_seed: int = 0
    adapter_seed: int = 0
    scene: sw.SceneParams = sw.SceneParams()
    graph: GraphParams = GraphParams()
    loop: LoopParams = LoopParams()
    policy: PolicyParams = PolicyParams()


@lru_cache(maxsize=4)
def _scene(params: sw.SceneParams) -> sw.Scene:
    return sw.generate_scene(params)


@lru_cache(maxsize=4)
def _tour(params: sw.SceneParams, coverage: float, tour_seed: int) -> sw.TourDemonstration:
    return sw.generate_tour(_scene(params), coverage, tour_seed)


@lru_cache(maxsize=8)
def _graph(params: sw.SceneParams, coverage: float, tour_seed: int, gp: GraphParams) -> MemoryGraph:
    return build_graph(_tour(params, coverage, tour_seed), gp)


@lru_cache(maxsize=8)
def _obstacle_scene(params: sw.SceneParams, count: int, keep: tuple) -> sw.Scene:
    return sw.inject_obstacles(_scene(params), count, seed=count, keep_clear=keep)


@lru_cache(maxsize=2)
def _adapter(seed: int, c_g: int) -> AdapterParams:
    return AdapterParams.from_seed(seed, c_g=c_g)


@lru_cache(maxsize=64)
def _suite_for_scene(cfg: SuiteConfig, scene_seed: int) -> tuple[EpisodeSpec, ...]:
    scene = _scene(replace(cfg.scene, seed=scene_seed))
    return tuple(sample_episodes(scene, scene_seed, cfg.episodes_per_scene,
                                 goal_kind=cfg.goal_kind, min_geodesic=cfg.min_geodesic,
                                 max_steps=cfg.max_steps, success_radius=cfg.success_radius))


def make_suite(cfg: SuiteConfig) -> list[EpisodeSpec]:
    out = []
    for s in cfg.scene_seeds:
        out.extend(_suite_for_scene(cfg, s))
    return sorted(out, key=lambda e: e.spec_id)


def _keep_points(cfg: SuiteConfig, scene_seed: int) -> tuple:
    pts = []
    for e in _suite_for_scene(cfg, scene_seed):
        pts.append((e.goal.x, e.goal.y))
        pts.append((e.start.x, e.start.y))
    return tuple(pts)


def execute(cfg: SuiteConfig, variant: Variant, spec: EpisodeSpec, *, full: bool = False):
    """Run ``spec`` under ``variant``; returns a JSON record (or the result)."""
    sp = replace(cfg.scene, seed=spec.scene_seed)
    try:
        scene = _scene(sp)
        if variant.obstacles:
            scene = _obstacle_scene(sp, variant.obstacles, _keep_points(cfg, spec.scene_seed))
        graph = None
        if not variant.policy_only:
            gp = replace(cfg.graph, d=variant.d, r=variant.r)
            graph = _graph(sp, cfg.coverage, cfg.tour_seed, gp)
        adapter = _adapter(cfg.adapter_seed, sw.DEFAULT_SENSOR.grid_channels) if variant.use_adapter else None
        loop = replace(cfg.loop, retrieval_mode=variant.retrieval_mode)
        res = run_episode(spec, graph, adapter, scene, loop, cfg.policy,
                          policy_only=variant.policy_only, record_trajectory=full)
    except (ValueError, RuntimeError) as exc:
        if full:
            raise
        # setup failures count as failed episodes and are logged in the record
        return {"variant": variant.name, "spec_id": spec.spec_id, "seed": spec.seed,
                "success": False, "steps": 0, "p": 0.0, "l": 0.0,
                "termination": "setup_error", "error": str(exc), "events": {}}
    if full:
        return res
    rec = {"variant": variant.name, **res.to_record()}
    rec["cadence_ok"] = cadence_ok(res, cfg.loop.t_global)
    rec["dispatch_ok"] = dispatch_ok(res)
    return rec


def cadence_ok(res: EpisodeResult, t_global: int) -> bool:
    """Re-localisation gaps never exceed T_g; periodic ones land exactly on it."""
    locs = [e for e in res.events if e["kind"] == "localize"]
    for a, b in zip(locs, locs[1:]):
        gap = b["step"] - a["step"]
        if gap > t_global or (b["trigger"] == "period" and gap != t_global):
            return False
    if locs and res.termination != "unreachable" and res.steps - locs[-1]["step"] > t_global:
        return False
    return True


def dispatch_ok(res: EpisodeResult) -> bool:
    """Image-goal mode only once the cursor has reached K (graph episodes)."""
    for _, mode, cursor, K in res.calls:
        if mode == "image" and cursor < K - 1 and K > 1:
            return False
        if mode == "point" and cursor >= K - 1:
            return False
    return True


def _task(args):
    cfg, variant, spec = args
    return execute(cfg, variant, spec)


def run_benchmark(cfg: SuiteConfig, variants: Iterable[Variant], workers: int = 1,
                  suite: Sequence[EpisodeSpec] | None = None) -> list[dict]:
    """All (variant, episode) records, sorted by variant order then spec id."""
    variants = list(variants)
    if not variants:
        raise ValueError("no variants to run")
    suite = list(suite) if suite is not None else make_suite(cfg)
    if not suite:
        raise ValueError("empty episode suite")
    # scene-major order keeps the per-process caches warm
    tasks = [(cfg, v, s) for s in sorted(suite, key=lambda e: e.spec_id) for v in variants]
    if workers <= 1:
        records = [_task(t) for t in tasks]
    else:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else mp.get_context()
        per_scene = max(1, len(variants) * cfg.episodes_per_scene)
        with ctx.Pool(workers) as pool:
            records = pool.map(_task, tasks, chunksize=per_scene)
    order = {v.name: i for i, v in enumerate(variants)}
    return sorted(records, key=lambda r: (order[r["variant"]], r["spec_id"]))


def summarize(records: Sequence[dict], variants: Sequence[Variant]) -> list[dict]:
    rows = []
    for v in variants:
        rs = [r for r in records if r["variant"] == v.name]
        if not rs:
            continue
        sr, spl = compute_metrics([(r["success"], r["p"], r["l"]) for r in rs])
        term = Counter(r["termination"] for r in rs)
        rows.append({"variant": v.name, "episodes": len(rs), "SR": sr, "SPL": spl,
                     "terminations": {k: term[k] for k in sorted(term)}})
    return rows


def format_table(rows: Sequence[dict]) -> str:
    lines = [f"{'variant':<16} {'episodes':>8} {'SR':>7} {'SPL':>7}"]
    for r in rows:
        lines.append(f"{r['variant']:<16} {r['episodes']:>8d} {100 * r['SR']:>7.2f} {100 * r['SPL']:>7.2f}")
    return "\n".join(lines) + "\n"


def write_jsonl(records: Sequence[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# trap fixtures


def trap_fixture(index: int, scene_params: sw.SceneParams | None = None):
    """(clean scene, trapped scene, spec): a C-shaped pocket opening away from the goal.

    The agent starts inside the pocket, facing its back wall; the goal lies
    several metres behind that wall, so greedy progress leads into it.
    """
    base = scene_params or sw.SceneParams(extent_x=12.0, extent_y=10.0, object_count=8,
                                          clutter_density=0.0, room_size=12.0)
    clean = sw.generate_scene(replace(base, seed=1000 + index))
    rng = np.random.default_rng([index, 0x7A9])
    w, t = 1.6, 0.2  # pocket width, wall thickness
    depth = 1.4 + 0.4 * (index % 3)
    cx = rng.uniform(4.0, 8.0)
    cy = rng.uniform(3.5, 6.5)
    flip = index % 2 == 1
    s = -1.0 if flip else 1.0
    back = cx + s * depth / 2.0
    opening = cx - s * depth / 2.0
    lo, hi = min(back, opening), max(back, opening)
    rects = [
        (min(back, back + s * t), cy - w / 2 - t, max(back, back + s * t), cy + w / 2 + t),
        (lo, cy + w / 2, hi, cy + w / 2 + t),
        (lo, cy - w / 2 - t, hi, cy - w / 2),
    ]
    trapped = sw.add_rectangles(clean, rects)
    start = Pose(opening + s * 0.5 * depth, cy, 0.0 if not flip else math.pi)
    gx = back + s * 2.5
    goal_xy = (min(max(gx, 1.0), clean.params.extent_x - 1.0), cy)
    # nearest object gives the goal view something to match
    objs = sorted(clean.objects, key=lambda o: float(np.hypot(*(o.position - goal_xy))))
    goal = None
    for obj in objs[:4]:
        goal = _instance_goal(trapped, obj, np.random.default_rng([index, obj.id]))
        if goal is not None:
            spec = EpisodeSpec(f"trap-{index:02d}", 1000 + index, start, goal, "instance", obj.id, index)
            break
    if goal is None:
        raise RuntimeError(f"trap fixture {index}: no goal view found")
    return clean, trapped, spec


def run_trap_suite(n: int = 6, cfg: SuiteConfig | None = None) -> list[EpisodeResult]:
    cfg = cfg or SuiteConfig()
    out = []
    adapter = AdapterParams.from_seed(cfg.adapter_seed)
    for i in range(n):
        clean, trapped, spec = trap_fixture(i)
        graph = build_graph(sw.generate_tour(clean, cfg.coverage, cfg.tour_seed), cfg.graph)
        out.append(run_episode(spec, graph, adapter, trapped, cfg.loop, cfg.policy))
    return out


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1)
