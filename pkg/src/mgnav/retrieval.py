"""Image-to-node localisation by two-stage hybrid retrieval."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import Embedding, cosine_similarity
from .simworld import ObservationFrame
from .smg import MemoryGraph, SpatialNode

RETRIEVAL_MODES = ("hybrid", "keyframe", "object")


@dataclass(frozen=True)
class RetrievalResult:
    node_id: int
    combined_score: float
    keyframe_score: float
    object_score: float
    candidates: tuple[tuple[int, float], ...]

    def to_record(self) -> dict:
        return {
            "winner": self.node_id,
            "combined": self.combined_score,
            "keyframe": self.keyframe_score,
            "object": self.object_score,
            "candidates": [list(c) for c in self.candidates],
        }


def keyframe_score(query: Embedding, node: SpatialNode) -> float:
    """Best keyframe similarity, floored at 0."""
    return max(0.0, max(cosine_similarity(query, k.embedding) for k in node.keyframes))


def object_score(detections: Sequence[tuple[int, Embedding]], node: SpatialNode) -> float:
    """Mean over query detections of the best same-category instance match.

    A category the node never saw scores 0; no detections scores 0.
    """
    if not detections:
        return 0.0
    total = 0.0
    for cat, emb in detections:
        entries = node.objects.get(int(cat), ())
        best = max((cosine_similarity(emb, e.embedding) for e in entries), default=0.0)
        total += max(0.0, best)
    return total / len(detections)


def _dets(image: ObservationFrame) -> list[tuple[int, Embedding]]:
    return [(d.category, d.embedding) for d in image.detections]


def localize(
    image: ObservationFrame,
    graph: MemoryGraph,
    n_cand: int = 5,
    mode: str = "hybrid",
    nodes: Sequence[int] | None = None,
) -> RetrievalResult:
    """Match an image to its best graph node.

    ``hybrid`` shortlists the ``n_cand`` nodes with the highest keyframe score
    and re-ranks them by the mean of keyframe and object scores. ``keyframe``
    and ``object`` rank every node by that single score (ablations).
    Ties prefer the higher keyframe score, then the lower node id.
    ``nodes`` optionally restricts the search to a subset (a spatial prior).
    """
    if len(graph) == 0:
        raise ValueError("cannot localize on an empty graph")
    if mode not in RETRIEVAL_MODES:
        raise ValueError(f"unknown retrieval mode {mode!r}")
    pool = graph.nodes if nodes is None else [graph.node(i) for i in sorted(set(nodes))]
    if not pool:
        raise ValueError("empty candidate node set")
    q = image.frame_embedding
    dets = _dets(image)

    if mode == "object":
        scored = [(object_score(dets, n), 0.0, n.id) for n in pool]
        ranked = sorted(scored, key=lambda s: (-s[0], s[2]))
        top = ranked[: max(1, n_cand)]
        w = ranked[0]
        return RetrievalResult(w[2], w[0], keyframe_score(q, graph.node(w[2])), w[0],
                               tuple((s[2], s[0]) for s in top))

    kf = [(keyframe_score(q, n), n.id) for n in pool]
    kf.sort(key=lambda s: (-s[0], s[1]))
    if mode == "keyframe":
        top = kf[: max(1, n_cand)]
        k, nid = kf[0]
        return RetrievalResult(nid, k, k, 0.0, tuple((n, s) for s, n in top))

    shortlist = kf[: max(1, n_cand)]
    scored = []
    for k, nid in shortlist:
        o = object_score(dets, graph.node(nid))
        scored.append(((k + o) / 2.0, k, o, nid))
    scored.sort(key=lambda s: (-s[0], -s[1], s[3]))
    c, k, o, nid = scored[0]
    return RetrievalResult(nid, c, k, o, tuple((s[3], s[0]) for s in scored))


def confidence(image: ObservationFrame, target: SpatialNode) -> float:
    """How strongly the current view resembles ``target`` (its keyframe score)."""
    return keyframe_score(image.frame_embedding, target)
