"""Sparse spatial memory graph: construction from a tour, validation, files."""

from __future__ import annotations

import itertools
import json
import math
from collections import deque
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .core import Embedding, Pose, cosine_similarity, normalize
from .simworld import CATEGORIES, ObservationFrame, TourDemonstration

GRAPH_FORMAT = "mgnav-graph"
GRAPH_VERSION = 1


class GraphError(ValueError):
    """A memory graph violates one of its structural invariants."""


@dataclass(frozen=True)
class GraphParams:
    d: float = 1.0
    r: float = 0.5
    n_keyframes: int = 4
    n_keyframe_pool: int = 8
    tau: float = 0.85
    feature_dim: int = 64
    # weight between class-token and mean-patch object features; the synthetic
    # detector emits an already fused embedding so this is recorded only
    object_weight: float = 0.5

    def validate(self) -> None:
        if self.d <= 0 or self.r <= 0:
            raise ValueError("d and r must be > 0")
        if self.r > self.d:
            raise ValueError("r must not exceed d (regions would overlap)")
        if not 1 <= self.n_keyframes <= self.n_keyframe_pool:
            raise ValueError("need 1 <= n_keyframes <= n_keyframe_pool")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.feature_dim < 2 or not 0.0 <= self.object_weight <= 1.0:
            raise ValueError("feature_dim must be >= 2 and object_weight in [0, 1]")


@dataclass(frozen=True)
class Keyframe:
    embedding: Embedding
    pose: Pose
    frame_index: int


@dataclass(frozen=True)
class ObjectEntry:
    embedding: Embedding
    support: int


@dataclass(frozen=True, eq=False)
class SpatialNode:
    id: int
    center: np.ndarray
    keyframes: tuple[Keyframe, ...]
    objects: dict  # category index -> tuple[ObjectEntry, ...]
    source_frame: int = -1
    source_yaw: float = 0.0

    @cached_property
    def keyframe_matrix(self) -> np.ndarray:
        m = np.stack([k.embedding for k in self.keyframes])
        m.setflags(write=False)
        return m

    @property
    def center_pose(self) -> Pose:
        """Pose of the tour frame the node was sampled from."""
        return Pose(float(self.center[0]), float(self.center[1]), self.source_yaw, float(self.center[2]))


@dataclass(frozen=True, eq=False)
class MemoryGraph:
    nodes: tuple[SpatialNode, ...]
    edges: frozenset
    params: GraphParams

    @cached_property
    def adjacency(self) -> dict[int, tuple[int, ...]]:
        adj: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return {k: tuple(sorted(v)) for k, v in adj.items()}

    @cached_property
    def centers(self) -> np.ndarray:
        c = np.stack([n.center for n in self.nodes]) if self.nodes else np.zeros((0, 3))
        c.setflags(write=False)
        return c

    def node(self, node_id: int) -> SpatialNode:
        return self.nodes[node_id]

    def __len__(self) -> int:
        return len(self.nodes)


# --------------------------------------------------------------------------
# construction steps


def farthest_point_sample(poses: Sequence[Pose], min_spacing: float) -> list[int]:
    """Greedy FPS seeded with the first pose, stopping below ``min_spacing``."""
    if not poses:
        raise ValueError("farthest_point_sample needs at least one pose")
    pts = np.array([[p.x, p.y, p.z] for p in poses], dtype=np.float64)
    return [int(i) for i in kernels.fps(pts, float(min_spacing))]


def circular_variance(yaws) -> float:
    y = np.asarray(yaws, dtype=float)
    return 1.0 - math.hypot(float(np.cos(y).mean()), float(np.sin(y).mean()))


def select_keyframes(
    frames: Sequence[tuple[Embedding, Pose]], n_pool: int, n_keep: int
) -> list[int]:
    """Pick diverse keyframes; returns ascending indices into ``frames``.

    Stage 1 keeps ``n_pool`` mutually dissimilar frames by greedy min-max
    similarity, starting from the frame least similar on average to the rest.
    Stage 2 keeps the ``n_keep`` subset of those with the largest circular
    variance of yaw. Ties go to lower indices.
    """
    m = len(frames)
    if m == 0:
        raise ValueError("select_keyframes needs at least one frame")
    n_pool = max(1, min(n_pool, m))
    n_keep = max(1, min(n_keep, n_pool))
    emb = np.stack([f[0] for f in frames])
    sim = emb @ emb.T
    if m == 1:
        return [0]
    mean_other = (sim.sum(axis=1) - np.diag(sim)) / (m - 1)
    chosen = [int(np.argmin(mean_other))]
    worst = sim[chosen[0]].copy()
    taken = np.zeros(m, dtype=bool)
    taken[chosen[0]] = True
    while len(chosen) < n_pool:
        key = np.where(taken, np.inf, worst)
        nxt = int(np.argmin(key))
        chosen.append(nxt)
        taken[nxt] = True
        np.maximum(worst, sim[nxt], out=worst)
    pool = sorted(chosen)
    if n_keep == len(pool):
        return pool
    yaws = {i: frames[i][1].yaw for i in pool}
    best, best_var = None, -np.inf
    for combo in itertools.combinations(pool, n_keep):
        v = circular_variance([yaws[i] for i in combo])
        if v > best_var + 1e-12:
            best, best_var = list(combo), v
    return best


def aggregate_objects(
    detections: Sequence[tuple[int, Embedding]], tau: float, weight: float = 0.5
) -> dict[int, tuple[ObjectEntry, ...]]:
    """Merge same-category detections into instances.

    Detections are linked when their similarity exceeds ``tau``; connected
    groups (single linkage, in detection order) become one instance whose
    embedding is the normalised member mean. Instances whose representatives
    still exceed ``tau`` afterwards are merged as well, so the stored table
    never holds two instances of one category more similar than ``tau``.
    ``weight`` is accepted for interface parity and not used here.
    """
    del weight
    by_cat: dict[int, list[int]] = {}
    for i, (cat, _) in enumerate(detections):
        by_cat.setdefault(int(cat), []).append(i)
    table: dict[int, tuple[ObjectEntry, ...]] = {}
    for cat in sorted(by_cat):
        idx = by_cat[cat]
        parent = list(range(len(idx)))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        embs = [detections[i][1] for i in idx]
        for a in range(len(idx)):
            for b in range(a + 1, len(idx)):
                if cosine_similarity(embs[a], embs[b]) > tau:
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[max(ra, rb)] = min(ra, rb)
        groups: dict[int, list[int]] = {}
        for a in range(len(idx)):
            groups.setdefault(find(a), []).append(a)
        clusters = [groups[k] for k in sorted(groups)]
        while True:
            reps = [normalize(np.mean([embs[a] for a in c], axis=0)) for c in clusters]
            pair = next(
                ((i, j) for i in range(len(reps)) for j in range(i + 1, len(reps))
                 if cosine_similarity(reps[i], reps[j]) > tau),
                None,
            )
            if pair is None:
                break
            i, j = pair
            clusters[i] = sorted(clusters[i] + clusters[j])
            del clusters[j]
        table[cat] = tuple(ObjectEntry(r, len(c)) for r, c in zip(reps, clusters))
    return table


def derive_edges(assignment: Sequence[int]) -> frozenset:
    """Undirected node pairs realised by consecutive tour frames."""
    edges = set()
    for a, b in zip(assignment[:-1], assignment[1:]):
        if a != b:
            edges.add((min(a, b), max(a, b)))
    return frozenset(edges)


def _patch_clear(frame: ObservationFrame, target_xy: np.ndarray) -> bool:
    """Line of sight from the frame pose to ``target_xy`` inside its local patch.

    Samples that fall outside the patch count as free.
    """
    patch = frame.local_occupancy
    free = (~patch).astype(np.float64)
    res = frame.resolution
    oy, ox = frame.patch_origin
    x0 = frame.pose.x - ox * res
    y0 = frame.pose.y - oy * res
    x1 = float(target_xy[0]) - ox * res
    y1 = float(target_xy[1]) - oy * res
    m = kernels.segment_min(free, np.array([x0]), np.array([y0]), np.array([x1]), np.array([y1]),
                            res, res / 2.0, 1, 1.0)
    return bool(m[0] > 0.5)


def assign_frames(tour: TourDemonstration, centers: np.ndarray) -> list[int]:
    """Nearest visible node centre per frame (nearest overall as fallback)."""
    pos = np.array([[f.pose.x, f.pose.y, f.pose.z] for f in tour.frames])
    d = np.linalg.norm(pos[:, None, :] - centers[None, :, :], axis=2)
    out = []
    for t, frame in enumerate(tour.frames):
        order = np.argsort(d[t], kind="stable")
        pick = int(order[0])
        for k in order[:6]:
            if d[t, k] == 0.0 or _patch_clear(frame, centers[k]):
                pick = int(k)
                break
        out.append(pick)
    return out


def build_graph(tour: TourDemonstration, params: GraphParams | None = None) -> MemoryGraph:
    """Full construction: FPS centres, regions, keyframes, objects, edges."""
    params = params or GraphParams()
    params.validate()
    if not tour.frames:
        raise ValueError("cannot build a graph from an empty tour")
    poses = tour.poses
    centers_idx = farthest_point_sample(poses, params.d)
    pos = np.array([[p.x, p.y, p.z] for p in poses])
    centers = pos[centers_idx]
    assignment = assign_frames(tour, centers)
    edges = derive_edges(assignment)

    dist = np.linalg.norm(pos[:, None, :] - centers[None, :, :], axis=2)
    nodes = []
    for k, src in enumerate(centers_idx):
        region = [t for t in np.nonzero(dist[:, k] <= params.r)[0]
                  if t == src or _patch_clear(tour.frames[t], centers[k])]
        frames = [(tour.frames[t].frame_embedding, poses[t]) for t in region]
        picked = select_keyframes(frames, params.n_keyframe_pool, params.n_keyframes)
        kfs = tuple(Keyframe(tour.frames[region[i]].frame_embedding, poses[region[i]], int(region[i]))
                    for i in picked)
        dets = [(d.category, d.embedding) for t in region for d in tour.frames[t].detections]
        objects = aggregate_objects(dets, params.tau, params.object_weight)
        c = centers[k].copy()
        c.setflags(write=False)
        nodes.append(SpatialNode(k, c, kfs, objects, int(src), poses[src].yaw))
    return MemoryGraph(tuple(nodes), edges, params)


# --------------------------------------------------------------------------
# invariants and persistence


def is_connected(graph: MemoryGraph) -> bool:
    if len(graph) <= 1:
        return True
    seen = {0}
    q = deque([0])
    adj = graph.adjacency
    while q:
        for n in adj[q.popleft()]:
            if n not in seen:
                seen.add(n)
                q.append(n)
    return len(seen) == len(graph)


def validate_graph(graph: MemoryGraph) -> None:
    """Raise :class:`GraphError` naming the first violated invariant."""
    ids = [n.id for n in graph.nodes]
    if ids != list(range(len(ids))):
        raise GraphError("node ids must be 0..n-1 in order")
    for a, b in graph.edges:
        if a == b:
            raise GraphError(f"self-edge on node {a}")
        if not (0 <= a < len(ids) and 0 <= b < len(ids)):
            raise GraphError(f"edge ({a}, {b}) references a missing node")
    for n in graph.nodes:
        if not n.keyframes:
            raise GraphError(f"node {n.id} has no keyframes")
        if len(n.keyframes) > graph.params.n_keyframes:
            raise GraphError(f"node {n.id} has more than N_f keyframes")
        embs = [k.embedding for k in n.keyframes] + [e.embedding for v in n.objects.values() for e in v]
        for e in embs:
            if abs(float(np.linalg.norm(e)) - 1.0) > 1e-6:
                raise GraphError(f"node {n.id} stores a non-unit embedding")
    if not is_connected(graph):
        raise GraphError(f"graph is not connected ({len(graph)} nodes, {len(graph.edges)} edges)")


def graph_to_dict(graph: MemoryGraph) -> dict:
    return {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "params": asdict(graph.params),
        "node_count": len(graph),
        "nodes": [
            {
                "id": n.id,
                "center": [float(v) for v in n.center],
                "source_frame": n.source_frame,
                "source_yaw": n.source_yaw,
                "keyframes": [
                    {"frame": k.frame_index, "pose": [k.pose.x, k.pose.y, k.pose.yaw, k.pose.z],
                     "embedding": [float(v) for v in k.embedding]}
                    for k in n.keyframes
                ],
                "objects": {
                    CATEGORIES[c]: [{"support": e.support, "embedding": [float(v) for v in e.embedding]}
                                    for e in entries]
                    for c, entries in sorted(n.objects.items())
                },
            }
            for n in graph.nodes
        ],
        "edges": sorted([list(e) for e in graph.edges]),
    }


def _ro(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def graph_from_dict(doc: dict) -> MemoryGraph:
    if doc.get("format") != GRAPH_FORMAT:
        raise GraphError("not a memory graph file")
    if doc.get("version") != GRAPH_VERSION:
        raise GraphError(f"unsupported graph version {doc.get('version')}")
    params = GraphParams(**doc["params"])
    nodes = []
    for n in doc["nodes"]:
        kfs = tuple(
            Keyframe(_ro(k["embedding"]), Pose(k["pose"][0], k["pose"][1], k["pose"][2], k["pose"][3]),
                     int(k["frame"]))
            for k in n["keyframes"]
        )
        objects = {
            CATEGORIES.index(cat): tuple(ObjectEntry(_ro(e["embedding"]), int(e["support"])) for e in entries)
            for cat, entries in n["objects"].items()
        }
        nodes.append(SpatialNode(int(n["id"]), _ro(n["center"]), kfs, objects, int(n["source_frame"]),
                                 float(n["source_yaw"])))
    if doc.get("node_count", len(nodes)) != len(nodes):
        raise GraphError("node_count header does not match node records")
    edges = frozenset((int(a), int(b)) for a, b in doc["edges"])
    graph = MemoryGraph(tuple(nodes), edges, params)
    validate_graph(graph)
    return graph


def save_graph(graph: MemoryGraph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(graph)))


def load_graph(path) -> MemoryGraph:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: not valid JSON ({exc})") from exc
    return graph_from_dict(doc)
