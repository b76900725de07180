"""Road network as a directed graph with deterministic shortest-path planning."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence


class RoadNetError(ValueError):
    """Invalid graph construction or query."""


class NoRouteError(RoadNetError):
    """Destination cannot be reached from the source."""


@dataclass(frozen=True)
class Edge:
    id: int
    src: int
    dst: int
    length: int


@dataclass(frozen=True)
class Route:
    nodes: tuple[int, ...]
    length: int


@dataclass
class RoadGraph:
    """Intersections at integer grid coordinates joined by directed segments.

    Edge ids are positions in ``edges``. ``out_edges[n]`` lists the outgoing
    edges of ``n`` ordered by target node id, which is the ordering turn
    choices index into.
    """

    coords: list[tuple[int, int]]
    edges: list[Edge]
    out_edges: list[list[Edge]] = field(init=False)
    in_edges: list[list[Edge]] = field(init=False)

    def __post_init__(self) -> None:
        n = len(self.coords)
        seen: set[tuple[int, int]] = set()
        for i, e in enumerate(self.edges):
            if e.id != i:
                raise RoadNetError(f"edge at index {i} has id {e.id}")
            if not (0 <= e.src < n and 0 <= e.dst < n):
                raise RoadNetError(f"edge {i} references a missing node")
            if e.src == e.dst:
                raise RoadNetError(f"edge {i} is a self-loop")
            if e.length < 1:
                raise RoadNetError(f"edge {i} has length {e.length} < 1")
            if (e.src, e.dst) in seen:
                raise RoadNetError(f"duplicate edge {e.src}->{e.dst}")
            seen.add((e.src, e.dst))
        self.out_edges = [[] for _ in range(n)]
        self.in_edges = [[] for _ in range(n)]
        for e in self.edges:
            self.out_edges[e.src].append(e)
            self.in_edges[e.dst].append(e)
        for lst in self.out_edges:
            lst.sort(key=lambda e: e.dst)
        for lst in self.in_edges:
            lst.sort(key=lambda e: e.src)
        self._edge_index = {(e.src, e.dst): e for e in self.edges}
        self._dirs = [self._heading(e) for e in self.edges]
        self._dist_cache: dict[int, list[float]] = {}
        self.memo: dict = {}
        self._route_cache: dict[tuple[int, int], Route] = {}

    @classmethod
    def from_lists(
        cls, nodes: Sequence[Sequence[int]], edges: Iterable[Sequence[int]]
    ) -> "RoadGraph":
        coords = [(int(x), int(y)) for x, y in nodes]
        es = [Edge(i, int(u), int(v), int(ln)) for i, (u, v, ln) in enumerate(edges)]
        return cls(coords, es)

    @property
    def num_nodes(self) -> int:
        return len(self.coords)

    def edge_between(self, u: int, v: int) -> Edge:
        try:
            return self._edge_index[(u, v)]
        except KeyError:
            raise RoadNetError(f"no edge {u}->{v}") from None

    def has_edge(self, u: int, v: int) -> bool:
        return (u, v) in self._edge_index

    def check_node(self, n: int) -> None:
        if not (isinstance(n, int) and 0 <= n < self.num_nodes):
            raise RoadNetError(f"invalid node id {n!r}")

    def direction(self, e: Edge) -> tuple[float, float]:
        """Unit heading of an edge in coordinate space."""
        return self._dirs[e.id]

    def _heading(self, e: Edge) -> tuple[float, float]:
        (x0, y0), (x1, y1) = self.coords[e.src], self.coords[e.dst]
        dx, dy = x1 - x0, y1 - y0
        norm = math.hypot(dx, dy)
        if norm == 0:
            return (0.0, 0.0)
        return (dx / norm, dy / norm)

    def distances_to(self, dst: int) -> list[float]:
        """Shortest-path length from every node to ``dst`` (inf if unreachable)."""
        self.check_node(dst)
        cached = self._dist_cache.get(dst)
        if cached is not None:
            return cached
        dist = [math.inf] * self.num_nodes
        dist[dst] = 0
        heap = [(0, dst)]
        while heap:
            d, v = heapq.heappop(heap)
            if d > dist[v]:
                continue
            for e in self.in_edges[v]:
                nd = d + e.length
                if nd < dist[e.src]:
                    dist[e.src] = nd
                    heapq.heappush(heap, (nd, e.src))
        self._dist_cache[dst] = dist
        return dist

    def is_strongly_connected(self) -> bool:
        if self.num_nodes == 0:
            return True
        if any(math.isinf(d) for d in self.distances_to(0)):
            return False
        # reachability from 0 along forward edges
        seen = {0}
        stack = [0]
        while stack:
            u = stack.pop()
            for e in self.out_edges[u]:
                if e.dst not in seen:
                    seen.add(e.dst)
                    stack.append(e.dst)
        return len(seen) == self.num_nodes


def build_grid(width: int, height: int, edge_len: int) -> RoadGraph:
    """Lattice of ``width`` x ``height`` intersections, ids row-major from 0."""
    if width < 1 or height < 1:
        raise RoadNetError("grid dimensions must be >= 1")
    if edge_len < 1:
        raise RoadNetError("edge_len must be >= 1")
    coords = [(x, y) for y in range(height) for x in range(width)]
    pairs = []
    for y in range(height):
        for x in range(width):
            u = y * width + x
            if x + 1 < width:
                pairs += [(u, u + 1), (u + 1, u)]
            if y + 1 < height:
                pairs += [(u, u + width), (u + width, u)]
    pairs.sort()
    edges = [Edge(i, u, v, edge_len) for i, (u, v) in enumerate(pairs)]
    return RoadGraph(coords, edges)


def shortest_path(graph: RoadGraph, src: int, dst: int) -> Route:
    """Minimum-length route; equal-length routes resolve to the
    lexicographically smallest node sequence."""
    graph.check_node(src)
    graph.check_node(dst)
    key = (src, dst)
    cached = graph._route_cache.get(key)
    if cached is not None:
        return cached
    # Heap entries order by (length, path); since edge lengths are >= 1 every
    # equal-length candidate for a node is queued before that node is settled.
    heap: list[tuple[int, tuple[int, ...]]] = [(0, (src,))]
    settled: set[int] = set()
    route = None
    while heap:
        d, path = heapq.heappop(heap)
        u = path[-1]
        if u in settled:
            continue
        settled.add(u)
        if u == dst:
            route = Route(path, d)
            break
        for e in graph.out_edges[u]:
            if e.dst not in settled:
                heapq.heappush(heap, (d + e.length, path + (e.dst,)))
    if route is None:
        raise NoRouteError(f"no route from {src} to {dst}")
    graph._route_cache[key] = route
    return route


def graph_distance(graph: RoadGraph, edge: int, progress: int, dst: int) -> int:
    """Cells left on the current edge plus the shortest length from its head to ``dst``."""
    if not 0 <= edge < len(graph.edges):
        raise RoadNetError(f"invalid edge id {edge!r}")
    e = graph.edges[edge]
    if not 0 <= progress <= e.length:
        raise RoadNetError(f"progress {progress} outside [0, {e.length}]")
    rest = graph.distances_to(dst)[e.dst]
    if math.isinf(rest):
        raise NoRouteError(f"no route from {e.dst} to {dst}")
    return e.length - progress + int(rest)


def node_distance(graph: RoadGraph, src: int, dst: int) -> int:
    graph.check_node(src)
    d = graph.distances_to(dst)[src]
    if math.isinf(d):
        raise NoRouteError(f"no route from {src} to {dst}")
    return int(d)
