import numpy as np
import pytest

from mgnav.core import Pose, normalize
from mgnav.planner import BlockedEdges, NodePath, PathUnreachable, edge_key, mark_blocked, path_cost, plan_path
from mgnav.smg import GraphParams, Keyframe, MemoryGraph, SpatialNode


def _graph(centers, edges):
    kf = (Keyframe(normalize([1.0, 0.0]), Pose(0, 0), 0),)
    nodes = tuple(SpatialNode(i, np.array([x, y, 0.0]), kf, {}) for i, (x, y) in enumerate(centers))
    return MemoryGraph(nodes, frozenset(edge_key(a, b) for a, b in edges), GraphParams())


# a square 0-1-2-3 plus a long detour 0-4-2
SQUARE = _graph([(0, 0), (1, 0), (1, 1), (0, 1), (3, 3)], [(0, 1), (1, 2), (2, 3), (3, 0), (0, 4), (4, 2)])


def test_shortest_path_and_cost():
    p = plan_path(SQUARE, 0, 2, goal_ref="g")
    assert p.node_ids in ([0, 1, 2], [0, 3, 2])
    assert p.cost == pytest.approx(2.0)
    assert p.cost == pytest.approx(path_cost(SQUARE, p.node_ids))
    assert p.goal == "g" and p.K == 4 and p.target == 0 and p.previous is None


def test_blocked_edges_force_detour():
    p = plan_path(SQUARE, 0, 2, blocked=[(1, 2), (3, 2)])
    assert p.node_ids == [0, 4, 2]
    with pytest.raises(PathUnreachable):
        plan_path(SQUARE, 0, 2, blocked=[(2, 1), (2, 3), (4, 2)])


def test_start_equals_goal_and_bad_ids():
    p = plan_path(SQUARE, 3, 3)
    assert p.node_ids == [3] and p.cost == 0.0
    with pytest.raises(KeyError):
        plan_path(SQUARE, 0, 9)


def test_node_path_cursor():
    p = NodePath([5, 6, 7], goal="g")
    p.cursor = 2
    assert p.target == 7 and p.previous == 6 and not p.at_goal
    p.cursor = 3
    assert p.at_goal and p.target is None and p.previous == 7


def test_blocked_edges_expire():
    b = BlockedEdges(ttl=10)
    assert mark_blocked(b, (3, 1), now=0) == frozenset({(1, 3)})
    assert b.active(9) == frozenset({(1, 3)})
    assert b.active(10) == frozenset()
    b.mark((0, 1), 0)
    b.clear()
    assert b.active(0) == frozenset()
