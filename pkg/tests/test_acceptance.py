"""Acceptance suite: one verdict per criterion, echoed in the terminal summary.

Benchmark-backed criteria (6-9) share the per-variant episode records through
a module cache, so each variant runs once per session.
"""

import heapq
import itertools
import math
import time
from dataclasses import replace
from functools import lru_cache

import numpy as np
import pytest

from conftest import ACCEPTANCE
from mgnav import episode as ep
from mgnav import kernels
from mgnav import retrieval as rt
from mgnav import simworld as sw
from mgnav.core import Pose, TokenGrid, normalize
from mgnav.planner import PathUnreachable, plan_path
from mgnav.policy import AdapterParams, geometry_fuse
from mgnav.simworld import Detection, ObservationFrame
from mgnav.smg import GraphParams, Keyframe, MemoryGraph, ObjectEntry, SpatialNode, build_graph


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = (bool(ok), detail)


# --------------------------------------------------------------------------
# synthetic graphs


def _random_graph(rng, n: int, dim: int = 16, extra: float = 0.15, objects: bool = False) -> MemoryGraph:
    pts = rng.uniform(0, 20, (n, 2))
    edges = set()
    for v in range(1, n):  # random spanning tree keeps it connected
        u = int(rng.integers(v))
        edges.add((u, v))
    for a, b in itertools.combinations(range(n), 2):
        if rng.random() < extra:
            edges.add((a, b))
    nodes = []
    for i in range(n):
        kfs = tuple(Keyframe(normalize(rng.standard_normal(dim)), Pose(pts[i, 0], pts[i, 1]), i)
                    for _ in range(int(rng.integers(1, 5))))
        objs = {}
        if objects:
            for cat in rng.choice(6, size=int(rng.integers(0, 4)), replace=False):
                objs[int(cat)] = tuple(ObjectEntry(normalize(rng.standard_normal(dim)), 1)
                                       for _ in range(int(rng.integers(1, 3))))
        nodes.append(SpatialNode(i, np.array([pts[i, 0], pts[i, 1], 0.0]), kfs, objs))
    return MemoryGraph(tuple(nodes), frozenset(edges), GraphParams(feature_dim=dim))


def _ucs(graph: MemoryGraph, s: int, t: int, blocked=frozenset()):
    """Plain uniform-cost search over explicit adjacency lists."""
    nbrs = {i: [] for i in range(len(graph))}
    for a, b in graph.edges:
        if (a, b) in blocked:
            continue
        nbrs[a].append(b)
        nbrs[b].append(a)
    c = graph.centers
    best = {s: 0.0}
    heap = [(0.0, s)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        if u == t:
            return d
        done.add(u)
        for v in nbrs[u]:
            nd = d + math.sqrt(float(((c[u] - c[v]) ** 2).sum()))
            if nd < best.get(v, math.inf):
                best[v] = nd
                heapq.heappush(heap, (nd, v))
    return None


def test_criterion_01_astar_matches_ucs():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    mismatches = 0
    for _ in range(200):
        g = _random_graph(rng, int(rng.integers(2, 51)))
        s, t = (int(v) for v in rng.integers(len(g), size=2))
        edges = sorted(g.edges)
        blocked = frozenset(edges[i] for i in np.nonzero(rng.random(len(edges)) < 0.1)[0])
        want = _ucs(g, s, t, blocked)
        try:
            got = plan_path(g, s, t, blocked).cost
        except PathUnreachable:
            got = None
        mismatches += got != want
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and dt < 10.0
    record(1, ok, f"{200 - mismatches}/200 costs equal, {dt:.2f}s")
    assert ok


# --------------------------------------------------------------------------
# retrieval


def _query(rng, node: SpatialNode, dim: int, sigma: float) -> ObservationFrame:
    base = node.keyframes[int(rng.integers(len(node.keyframes)))].embedding
    dets = []
    for cat, entries in node.objects.items():
        e = entries[int(rng.integers(len(entries)))].embedding
        dets.append(Detection(cat, normalize(e + sigma * rng.standard_normal(dim)), 0.0, 1.0))
    if rng.random() < 0.5:  # distractor detection
        dets.append(Detection(int(rng.integers(6)), normalize(rng.standard_normal(dim)), 0.0, 2.0))
    return ObservationFrame(node.center_pose, normalize(base + sigma * rng.standard_normal(dim)),
                            TokenGrid(np.zeros((2, 2, 1))), tuple(dets),
                            np.zeros((4, 4), dtype=bool), (0, 0), 0.1)


def _exhaustive(q: ObservationFrame, graph: MemoryGraph):
    """Score every node with both stages; same tie rules as the spec."""
    best = None
    for node in graph.nodes:
        k = max(0.0, max(min(1.0, max(-1.0, float(np.sum(q.frame_embedding * kf.embedding))))
                         for kf in node.keyframes))
        if q.detections:
            tot = 0.0
            for d in q.detections:
                sims = [min(1.0, max(-1.0, float(np.sum(d.embedding * e.embedding))))
                        for e in node.objects.get(d.category, ())]
                tot += max(0.0, max(sims, default=0.0))
            o = tot / len(q.detections)
        else:
            o = 0.0
        key = (-(k + o) / 2.0, -k, node.id)
        if best is None or key < best[0]:
            best = (key, node.id, (k + o) / 2.0, k, o)
    return best[1:]


def test_criterion_02_retrieval_matches_exhaustive():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    exact, within, n = 0, 0, 100
    for _ in range(n):
        dim = 16
        g = _random_graph(rng, int(rng.integers(5, 40)), dim, objects=True)
        q = _query(rng, g.node(int(rng.integers(len(g)))), dim, float(rng.uniform(0.1, 0.6)))
        nid, c, k, o = _exhaustive(q, g)
        full = rt.localize(q, g, n_cand=len(g))
        exact += (full.node_id, full.combined_score, full.keyframe_score, full.object_score) == (nid, c, k, o)
        cut = rt.localize(q, g, n_cand=5)
        within += cut.combined_score >= c - 0.15
    dt = time.perf_counter() - t0
    ok = exact == n and within >= 0.95 * n and dt < 10.0
    record(2, ok, f"bit-exact {exact}/{n}, N_cand=5 within 0.15 on {within}/{n}, {dt:.2f}s")
    assert ok


# --------------------------------------------------------------------------
# farthest point sampling


def _greedy_fps(pts: np.ndarray, spacing: float) -> list[int]:
    out = [0]
    mind = np.sqrt(((pts - pts[0]) ** 2).sum(axis=1))
    while len(out) < len(pts):
        i = int(np.argmax(mind))
        if mind[i] < spacing:
            break
        out.append(i)
        mind = np.minimum(mind, np.sqrt(((pts - pts[i]) ** 2).sum(axis=1)))
    return out


def _dispersion(pts: np.ndarray, idx) -> float:
    sel = pts[list(idx)]
    return min(float(np.linalg.norm(a - b)) for a, b in itertools.combinations(sel, 2))


def test_criterion_03_fps_matches_greedy_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    same = 0
    for _ in range(1000):
        pts = rng.uniform(0, 10, (int(rng.integers(1, 80)), 3))
        pts[:, 2] *= rng.random() < 0.5
        spacing = float(rng.uniform(0.0, 4.0))
        same += [int(i) for i in kernels.fps(pts, spacing)] == _greedy_fps(pts, spacing)
    bound_ok, cases = 0, 0
    for _ in range(300):
        n = int(rng.integers(3, 13))
        k = int(rng.integers(2, min(5, n) + 1))
        pts = rng.uniform(0, 10, (n, 3))
        greedy = list(kernels.fps(pts, 0.0))[:k]
        opt = max(_dispersion(pts, c) for c in itertools.combinations(range(n), k))
        cases += 1
        bound_ok += _dispersion(pts, greedy) >= 0.5 * opt - 1e-12
    dt = time.perf_counter() - t0
    ok = same == 1000 and bound_ok == cases and dt < 30.0
    record(3, ok, f"oracle match {same}/1000, half-optimal bound {bound_ok}/{cases}, {dt:.2f}s")
    assert ok


# --------------------------------------------------------------------------
# metrics

SPL_FIXTURE = [
    # success, p, l, per-episode ratio
    (True, 4.0, 4.0, 1.0),
    (True, 8.0, 4.0, 0.5),
    (True, 4.0, 3.0, 0.75),
    (True, 0.0, 0.0, 1.0),    # goal at start
    (True, 2.0, 0.0, 1.0),    # wandered but the optimum is zero
    (True, 3.0, 6.0, 1.0),    # shorter than the optimum (discretisation)
    (False, 5.0, 5.0, 0.0),
    (False, 0.0, 7.0, 0.0),
    (True, 16.0, 2.0, 0.125),
    (False, 12.0, 1.0, 0.0),
]


def test_criterion_04_spl_algebra():
    sr, spl = ep.compute_metrics([r[:3] for r in SPL_FIXTURE])
    exact = sr == 0.7 and spl == 0.5375
    per_row = all(ep.spl_ratio(s, p, l) == want for s, p, l, want in SPL_FIXTURE)
    rng = np.random.default_rng(404)
    bounded = True
    for _ in range(500):
        n = int(rng.integers(1, 30))
        rows = [(bool(rng.random() < 0.6), float(rng.uniform(0, 20)), float(rng.uniform(0, 20)) *
                 (rng.random() > 0.1)) for _ in range(n)]
        sr_r, spl_r = ep.compute_metrics(rows)
        bounded &= spl_r <= sr_r
    ok = exact and per_row and bounded
    record(4, ok, f"fixture SR={sr} SPL={spl} (want 0.7/0.5375), SPL<=SR on 500 random sets: {bounded}")
    assert ok


# --------------------------------------------------------------------------
# self-retrieval on generated scenes


def test_criterion_05_self_retrieval():
    t0 = time.perf_counter()
    n = self_hit = 0
    hits = {"hybrid": 0, "keyframe": 0, "object": 0}
    for seed in range(20):
        scene = sw.generate_scene(sw.SceneParams(seed=seed))
        g = build_graph(sw.generate_tour(scene, 0.95, 0), GraphParams())
        rng = np.random.default_rng([seed, 5])
        for node in g.nodes:
            n += 1
            clean = sw.render_observation(scene, node.center_pose, 0.0)
            self_hit += rt.localize(clean, g, 5).node_id == node.id
            noisy = sw.render_observation(scene, node.center_pose, 0.05, rng)
            for mode in hits:
                hits[mode] += rt.localize(noisy, g, 5, mode).node_id == node.id
    dt = time.perf_counter() - t0
    acc = {m: h / n for m, h in hits.items()}
    ok = (self_hit / n >= 0.95 and acc["hybrid"] >= acc["keyframe"] and acc["hybrid"] >= acc["object"]
          and dt < 120.0)
    record(5, ok, f"self {self_hit / n:.3f} over {n} nodes; sigma=0.05 hybrid {acc['hybrid']:.3f} "
                  f"keyframe {acc['keyframe']:.3f} object {acc['object']:.3f}; {dt:.1f}s")
    assert ok


# --------------------------------------------------------------------------
# benchmark-backed criteria

SUITE = ep.SuiteConfig()


@lru_cache(maxsize=None)
def _records(variant: ep.Variant) -> tuple:
    t0 = time.perf_counter()
    recs = ep.run_benchmark(SUITE, [variant], workers=ep.default_workers())
    _TIMES[variant] = time.perf_counter() - t0
    return tuple(recs)


_TIMES: dict = {}


def _variant(preset: str, name: str) -> ep.Variant:
    return next(v for v in ep.PRESETS[preset] if v.name == name)


def _metrics(variant: ep.Variant) -> tuple[float, float]:
    recs = _records(replace(variant, name="x"))  # identical settings share one run
    return ep.compute_metrics([(r["success"], r["p"], r["l"]) for r in recs])


def _timed(variants) -> float:
    for v in variants:
        _metrics(v)
    return sum(_TIMES[replace(v, name="x")] for v in variants)


def test_criterion_06_component_ordering():
    vs = ep.PRESETS["component"]
    dt = _timed(vs)
    (sr_p, _), (sr_g, _), (sr_a, _) = (_metrics(v) for v in vs)
    ok = 100 * sr_p + 20 <= 100 * sr_a and sr_g <= sr_a and dt < 600
    record(6, ok, f"SR policy-only {100 * sr_p:.1f}, graph {100 * sr_g:.1f}, graph+adapter "
                  f"{100 * sr_a:.1f}; {dt:.0f}s")
    assert ok


def test_criterion_07_sparsity_ordering():
    vs = ep.PRESETS["sparsity"]
    _timed(vs)
    (sr2, spl2), (sr15, spl15), (sr1, spl1) = (_metrics(v) for v in vs)
    monotone = sr2 <= sr15 <= sr1 and spl2 <= spl15 <= spl1
    sharper = (spl1 - spl2) >= (sr1 - sr2)
    ok = monotone and sharper
    record(7, ok, "SR/SPL (2.0,1.0) {:.1f}/{:.1f}, (1.5,0.8) {:.1f}/{:.1f}, (1.0,0.5) {:.1f}/{:.1f}".format(
        *(100 * v for v in (sr2, spl2, sr15, spl15, sr1, spl1))))
    assert ok


def test_criterion_08_robustness():
    clean = _variant("robustness", "obstacles-0")
    heavy = _variant("robustness", "obstacles-10")
    dt = _timed([heavy])
    sr0, _ = _metrics(clean)
    sr10, _ = _metrics(heavy)
    t0 = time.perf_counter()
    traps = ep.run_trap_suite(6)
    dt += time.perf_counter() - t0
    stuck = sum(r.termination == "stuck" for r in traps)
    drop = 100 * (sr0 - sr10)
    ok = drop <= 15 and stuck == 0 and dt < 600
    record(8, ok, f"SR 0 obstacles {100 * sr0:.1f}, 10 obstacles {100 * sr10:.1f} (drop {drop:.1f}); "
                  f"trap suite stuck {stuck}/{len(traps)} (successes {sum(r.success for r in traps)}); "
                  f"{dt:.0f}s")
    assert ok


def test_criterion_09_cadence_and_dispatch():
    variants = [v for p in ("component", "sparsity", "robustness") for v in ep.PRESETS[p]]
    recs = [r for v in variants for r in _records(replace(v, name="x"))]
    ran = [r for r in recs if r["termination"] != "setup_error"]
    cadence = sum(not r["cadence_ok"] for r in ran)
    dispatch = sum(not r["dispatch_ok"] for r in ran)
    ok = cadence == 0 and dispatch == 0 and len(ran) > 0
    record(9, ok, f"{len(ran)} episode logs: cadence violations {cadence}, dispatch violations {dispatch}")
    assert ok


def test_criterion_10_determinism(tmp_path):
    cfg = replace(SUITE, scene_seeds=(0, 1), episodes_per_scene=2)
    vs = [_variant("component", "graph+adapter"), _variant("robustness", "obstacles-5"),
          _variant("retrieval", "keyframe")]
    blobs = []
    for workers in (1, 2, 1):
        path = tmp_path / f"w{workers}-{len(blobs)}.jsonl"
        ep.write_jsonl(ep.run_benchmark(cfg, vs, workers=workers), path)
        blobs.append(path.read_bytes())
    ok = blobs[0] == blobs[1] == blobs[2] and len(blobs[0]) > 0
    record(10, ok, f"3 runs (workers 1, 2, 1) byte-identical: {ok}, {len(blobs[0])} bytes")
    assert ok


# --------------------------------------------------------------------------
# geometry fusion


def test_criterion_11_geometry_fuse_contracts():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1111)
    shape_ok = sym_ok = local_ok = 0
    for i in range(100):
        f = int(rng.choice([1, 2, 4]))
        h, w = f * int(rng.integers(1, 5)), f * int(rng.integers(1, 5))
        hg, wg = f * int(rng.integers(1, 5)), f * int(rng.integers(1, 5))
        c = int(rng.integers(1, 9))
        params = AdapterParams.from_seed(i, c_g=c, hidden=int(rng.integers(1, 17)), c_p=int(rng.integers(1, 17)))
        a = TokenGrid(rng.standard_normal((h, w, c)))
        b = TokenGrid(rng.standard_normal((hg, wg, c)))
        out = geometry_fuse(a, b, params, f)
        l_obs, l_goal = (h // f) * (w // f), (hg // f) * (wg // f)
        shape_ok += out.shape == (l_obs + l_goal, params.c_p)

        same = geometry_fuse(a, a, params, f)
        sym_ok += np.array_equal(same[:l_obs], same[l_obs:])

        # perturb one cell: only its pooled token (obs half) may change
        y, x = int(rng.integers(h)), int(rng.integers(w))
        d = a.data.copy()
        d[y, x] += rng.standard_normal(c) * 5.0
        out2 = geometry_fuse(TokenGrid(d), b, params, f)
        changed = np.nonzero(np.any(out2 != out, axis=1))[0]
        token = (y // f) * (w // f) + (x // f)
        local_ok += set(changed.tolist()) <= {token}
    dt = time.perf_counter() - t0
    ok = shape_ok == sym_ok == local_ok == 100 and dt < 5.0
    record(11, ok, f"shape {shape_ok}/100, symmetry {sym_ok}/100, locality {local_ok}/100, {dt:.2f}s")
    assert ok
