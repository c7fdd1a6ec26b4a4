"""Node-level A* planning over the memory graph."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Any, Iterable

from .smg import MemoryGraph


class PathUnreachable(Exception):
    """No path between the requested nodes given the blocked edges."""


def edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass
class NodePath:
    """Planned node sequence plus the terminal goal waypoint.

    The full sequence is ``node_ids + [goal]``; ``cursor`` indexes into it, so
    ``cursor == len(node_ids)`` means the agent is pursuing the goal image.
    """

    node_ids: list[int]
    goal: Any = None
    cursor: int = 0
    cost: float = 0.0

    @property
    def K(self) -> int:
        return len(self.node_ids) + 1

    @property
    def at_goal(self) -> bool:
        return self.cursor >= len(self.node_ids)

    @property
    def target(self) -> int | None:
        return None if self.at_goal else self.node_ids[self.cursor]

    @property
    def previous(self) -> int | None:
        if self.cursor == 0:
            return None
        return self.node_ids[min(self.cursor, len(self.node_ids)) - 1]


def _dist(graph: MemoryGraph, a: int, b: int) -> float:
    ca, cb = graph.nodes[a].center, graph.nodes[b].center
    return math.sqrt(float(((ca - cb) ** 2).sum()))


def path_cost(graph: MemoryGraph, node_ids: Iterable[int]) -> float:
    ids = list(node_ids)
    return sum(_dist(graph, a, b) for a, b in zip(ids[:-1], ids[1:]))


def plan_path(
    graph: MemoryGraph,
    start: int,
    goal: int,
    blocked: Iterable[tuple[int, int]] = (),
    goal_ref: Any = None,
) -> NodePath:
    """A* from ``start`` to ``goal`` with Euclidean edge costs and heuristic.

    Raises:
        PathUnreachable: when ``goal`` cannot be reached avoiding ``blocked``.
    """
    n = len(graph)
    if not (0 <= start < n and 0 <= goal < n):
        raise KeyError(f"start {start} or goal {goal} not in graph")
    blocked = {edge_key(*e) for e in blocked}
    adj = graph.adjacency
    g = {start: 0.0}
    parent = {start: -1}
    closed = set()
    frontier = [(_dist(graph, start, goal), start)]
    while frontier:
        _, u = heapq.heappop(frontier)
        if u in closed:
            continue
        if u == goal:
            break
        closed.add(u)
        for v in adj[u]:
            if v in closed or edge_key(u, v) in blocked:
                continue
            nd = g[u] + _dist(graph, u, v)
            if nd < g.get(v, math.inf):
                g[v] = nd
                parent[v] = u
                heapq.heappush(frontier, (nd + _dist(graph, v, goal), v))
    if goal not in g:
        raise PathUnreachable(f"node {goal} unreachable from {start}")
    ids = [goal]
    while parent[ids[-1]] != -1:
        ids.append(parent[ids[-1]])
    ids.reverse()
    return NodePath(ids, goal_ref, 0, g[goal])


@dataclass
class BlockedEdges:
    """Soft blocked-edge set; each entry lapses ``ttl`` steps after marking."""

    ttl: int
    expiry: dict = field(default_factory=dict)

    def mark(self, edge: tuple[int, int], now: int) -> frozenset:
        self.expiry[edge_key(*edge)] = now + self.ttl
        return self.active(now)

    def active(self, now: int) -> frozenset:
        for e in [e for e, t in self.expiry.items() if t <= now]:
            del self.expiry[e]
        return frozenset(self.expiry)

    def clear(self) -> None:
        self.expiry.clear()


def mark_blocked(blocked: BlockedEdges, edge: tuple[int, int], now: int) -> frozenset:
    """Add ``edge`` to the blocked set consumed by the next :func:`plan_path`."""
    return blocked.mark(edge, now)
