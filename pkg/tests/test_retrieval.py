import numpy as np
import pytest

from mgnav.core import Pose, TokenGrid, normalize
from mgnav.retrieval import confidence, keyframe_score, localize, object_score
from mgnav.simworld import Detection, ObservationFrame
from mgnav.smg import GraphParams, Keyframe, MemoryGraph, ObjectEntry, SpatialNode


def _frame(emb, dets=()):
    return ObservationFrame(Pose(0, 0), normalize(emb), TokenGrid(np.zeros((2, 2, 1))),
                            tuple(Detection(c, normalize(e), 0.0, 1.0) for c, e in dets),
                            np.zeros((3, 3), dtype=bool), (0, 0), 0.05)


def _node(i, kfs, objs=None):
    return SpatialNode(i, np.array([float(i), 0.0, 0.0]),
                       tuple(Keyframe(normalize(k), Pose(i, 0), 0) for k in kfs),
                       {c: tuple(ObjectEntry(normalize(e), 1) for e in es) for c, es in (objs or {}).items()})


def _graph(nodes):
    return MemoryGraph(tuple(nodes), frozenset(), GraphParams(feature_dim=3))


def test_scores():
    n = _node(0, [[1, 0, 0], [0, 1, 0]], {2: [[0, 0, 1], [1, 0, 0]]})
    assert keyframe_score(normalize([1, 1, 0]), n) == pytest.approx(np.sqrt(0.5))
    assert keyframe_score(normalize([0, 0, 1]), n) == 0.0
    assert object_score([], n) == 0.0
    # unseen category scores 0; negative best is floored
    dets = [(2, normalize([0, 0, 1])), (5, normalize([1, 0, 0])), (2, normalize([-1, 0, -1]))]
    assert object_score(dets, n) == pytest.approx(1.0 / 3)


def test_hybrid_reranks_shortlist():
    a = _node(0, [[1, 0, 0]], {})
    b = _node(1, [[0.9, 0.1, 0]], {1: [[0, 1, 0]]})
    c = _node(2, [[0, 0, 1]], {1: [[0, 1, 0]]})
    g = _graph([a, b, c])
    img = _frame([1, 0, 0], [(1, [0, 1, 0])])
    assert localize(img, g, mode="keyframe").node_id == 0
    res = localize(img, g, n_cand=2)
    assert res.node_id == 1
    assert res.combined_score == pytest.approx((res.keyframe_score + res.object_score) / 2)
    assert [c for c, _ in res.candidates] == [1, 0]
    # node 2 is outside the shortlist at n_cand=2 even though its object matches
    assert localize(img, g, mode="object").node_id == 1
    assert res.to_record()["winner"] == 1


def test_tie_breaks_and_subset():
    a = _node(0, [[1, 0, 0]])
    b = _node(1, [[1, 0, 0]])
    g = _graph([a, b])
    img = _frame([1, 0, 0])
    assert localize(img, g).node_id == 0
    assert localize(img, g, nodes=[1]).node_id == 1
    assert confidence(img, b) == pytest.approx(1.0)


def test_errors():
    g = _graph([_node(0, [[1, 0, 0]])])
    img = _frame([1, 0, 0])
    with pytest.raises(ValueError):
        localize(img, g, mode="bogus")
    with pytest.raises(ValueError):
        localize(img, g, nodes=[])
    with pytest.raises(ValueError):
        localize(img, _graph([]))
