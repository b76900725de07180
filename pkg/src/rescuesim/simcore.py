"""Cell-based traffic simulation: vehicles, traffic lights, ray sensing, episode lifecycle.

A vehicle sits on an edge at an integer ``progress`` in ``[0, length]``;
``progress == length`` is the stop line at the edge's head node. Crossing a
node moves a vehicle from ``(e, length)`` to ``(e', 1)``, so one tick of
travel always covers one cell of graph distance.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .roadnet import Edge, RoadGraph, graph_distance, shortest_path


class SimError(ValueError):
    """Invalid world construction or step input."""


class Kind(str, enum.Enum):
    ORDINARY = "Ordinary"
    NOISE = "Noise"
    SPECIAL = "Special"


class Phase(str, enum.Enum):
    NS_GREEN = "NSGreen"
    EW_GREEN = "EWGreen"


HOLD, SWITCH = 0, 1
# engine action indices; turn choice k is TURN_BASE + k
CONTINUE, WAIT, TURN_BASE = 0, 1, 2

DEFAULT_MIN_GREEN = 5
DEFAULT_SENSE_RANGE = 5


@dataclass
class VehicleState:
    id: int
    kind: Kind
    edge: int
    progress: int
    route: list[int]
    destination: int
    active: bool = True
    # index into ``route_edges`` of the edge currently driven (Ordinary/Noise)
    leg: int = 0
    route_edges: list[int] = field(default_factory=list)


@dataclass
class LightState:
    node: int
    phase: Phase = Phase.NS_GREEN
    time_in_phase: int = 0
    min_green: int = DEFAULT_MIN_GREEN


@dataclass
class StepEvents:
    arrivals: list[int] = field(default_factory=list)
    collisions: list[tuple[int, int]] = field(default_factory=list)
    # engines whose action was replaced by Wait (turn index out of range, no straight road)
    masked: list[int] = field(default_factory=list)


@dataclass
class RaySense:
    ahead: int
    behind: int
    left: int
    right: int
    edge: int
    progress: int
    destination: int

    def distances(self) -> tuple[int, int, int, int]:
        return (self.ahead, self.behind, self.left, self.right)


@dataclass
class WorldState:
    graph: RoadGraph
    fire_target: int
    max_steps: int
    rng: np.random.Generator
    sense_range: int = DEFAULT_SENSE_RANGE
    tick: int = 0
    vehicles: list[VehicleState] = field(default_factory=list)
    lights: list[LightState] = field(default_factory=list)
    engine_ids: list[int] = field(default_factory=list)
    occupancy: dict[tuple[int, int], int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.graph.check_node(self.fire_target)
        if self.max_steps < 0:
            raise SimError("max_steps must be >= 0")
        if self.sense_range < 0:
            raise SimError("sense_range must be >= 0")
        self.light_at = {lt.node: lt for lt in self.lights}
        if len(self.light_at) != len(self.lights):
            raise SimError("light nodes must be distinct")
        for lt in self.lights:
            self.graph.check_node(lt.node)
            if lt.min_green < 0:
                raise SimError("min_green must be >= 0")

    @property
    def engines(self) -> list[VehicleState]:
        return [self.vehicles[i] for i in self.engine_ids]

    def _add(self, v: VehicleState) -> None:
        key = (v.edge, v.progress)
        if key in self.occupancy:
            raise SimError(f"cell {key} already occupied")
        self.vehicles.append(v)
        self.occupancy[key] = v.id

    def add_engine(self, node: int | None = None, edge: int | None = None,
                   progress: int | None = None) -> int:
        """Place a special vehicle at a node (on the stop line of an incoming
        edge) or at an explicit edge position."""
        g = self.graph
        if node is not None:
            g.check_node(node)
            if node == self.fire_target:
                raise SimError("engine start coincides with fire target")
            for e in g.in_edges[node]:
                if (e.id, e.length) not in self.occupancy:
                    edge, progress = e.id, e.length
                    break
            else:
                raise SimError(f"no free stop line at node {node}")
        else:
            if edge is None or not 0 <= edge < len(g.edges):
                raise SimError(f"invalid engine edge {edge!r}")
            e = g.edges[edge]
            if progress is None or not 0 <= progress <= e.length:
                raise SimError(f"invalid engine progress {progress!r}")
            if progress == e.length and e.dst == self.fire_target:
                raise SimError("engine start coincides with fire target")
        e = g.edges[edge]
        vid = len(self.vehicles)
        self._add(VehicleState(vid, Kind.SPECIAL, edge, progress, [e.src, e.dst],
                               self.fire_target))
        self.engine_ids.append(vid)
        return vid

    def add_routed(self, kind: Kind, nodes: Sequence[int], progress: int = 0) -> int:
        """Place an Ordinary/Noise vehicle at ``progress`` on the first leg of a fixed route."""
        g = self.graph
        if len(nodes) < 2:
            raise SimError("a routed vehicle needs at least two route nodes")
        edges = [g.edge_between(u, v).id for u, v in zip(nodes, nodes[1:])]
        if not 0 <= progress < g.edges[edges[0]].length:
            raise SimError(f"spawn progress {progress} outside the first leg")
        vid = len(self.vehicles)
        self._add(VehicleState(vid, kind, edges[0], progress, list(nodes), nodes[-1],
                               route_edges=edges))
        return vid

    def distance_to_target(self, v: VehicleState) -> int:
        return graph_distance(self.graph, v.edge, v.progress, v.destination)


def spawn_ordinary(world: WorldState, count: int, rng: np.random.Generator,
                   max_tries: int = 1000) -> WorldState:
    """Add ``count`` vehicles with uniformly drawn start != destination."""
    if count < 0:
        raise SimError("count must be >= 0")
    g = world.graph
    n = g.num_nodes
    if count and n < 2:
        raise SimError("ordinary vehicles need a graph with >= 2 nodes")
    for _ in range(count):
        for _ in range(max_tries):
            start = int(rng.integers(n))
            dst = int(rng.integers(n - 1))
            if dst >= start:
                dst += 1
            route = shortest_path(g, start, dst)
            first = g.edge_between(route.nodes[0], route.nodes[1])
            if (first.id, 0) not in world.occupancy:
                break
        else:
            raise SimError("could not find a free spawn cell")
        world.add_routed(Kind.ORDINARY, route.nodes, 0)
    return world


def spawn_noise(world: WorldState, placements: Sequence[tuple[int, int]],
                rng: np.random.Generator) -> WorldState:
    """Queue ``count`` vehicles on cells ``0..count-1`` of each given edge.

    Each heads through the edge's head node to a random neighbour other than
    the edge's tail (when one exists), so the queue has to cross the
    intersection to dissolve.
    """
    g = world.graph
    for edge_id, count in placements:
        if not 0 <= edge_id < len(g.edges):
            raise SimError(f"noise placement on missing edge {edge_id!r}")
        if count < 0:
            raise SimError("noise count must be >= 0")
        e = g.edges[edge_id]
        if count > e.length:
            raise SimError(
                f"noise placement of {count} vehicles exceeds capacity {e.length} "
                f"of edge {edge_id}")
        for cell in range(count):
            if (edge_id, cell) in world.occupancy:
                raise SimError(f"noise cell ({edge_id}, {cell}) already occupied")
        for cell in range(count - 1, -1, -1):
            exits = [o.dst for o in g.out_edges[e.dst] if o.dst != e.src]
            if not exits:
                exits = [o.dst for o in g.out_edges[e.dst]]
            if exits:
                dest = exits[int(rng.integers(len(exits)))]
                nodes = [e.src] + list(shortest_path(g, e.dst, dest).nodes)
            else:
                nodes = [e.src, e.dst]
            world.add_routed(Kind.NOISE, nodes, cell)
    return world


def _axis(graph: RoadGraph, e: Edge) -> str:
    dx, dy = graph.direction(e)
    return "NS" if abs(dy) > abs(dx) else "EW"


def approach_green(world: WorldState, e: Edge) -> bool:
    light = world.light_at.get(e.dst)
    if light is None:
        return True
    axis = _axis(world.graph, e)
    return (light.phase is Phase.NS_GREEN) == (axis == "NS")


def straight_edge(graph: RoadGraph, e: Edge) -> Edge | None:
    return _branch(graph, e, "straight")


def _branch(graph: RoadGraph, e: Edge, which: str) -> Edge | None:
    key = ("branch", e.id, which)
    if key not in graph.memo:
        graph.memo[key] = _find_branch(graph, e, which)
    return graph.memo[key]


def _find_branch(graph: RoadGraph, e: Edge, which: str) -> Edge | None:
    hx, hy = graph.direction(e)
    for o in graph.out_edges[e.dst]:
        ox, oy = graph.direction(o)
        dot = hx * ox + hy * oy
        cross = hx * oy - hy * ox
        if which == "straight" and dot > 0.7:
            return o
        # left/right are taken in screen coordinates (y grows downward)
        if which == "left" and cross < -0.7:
            return o
        if which == "right" and cross > 0.7:
            return o
    return None


def _straight_predecessor(graph: RoadGraph, e: Edge) -> Edge | None:
    key = ("pred", e.id)
    if key not in graph.memo:
        graph.memo[key] = _find_predecessor(graph, e)
    return graph.memo[key]


def _find_predecessor(graph: RoadGraph, e: Edge) -> Edge | None:
    hx, hy = graph.direction(e)
    for i in graph.in_edges[e.src]:
        ix, iy = graph.direction(i)
        if hx * ix + hy * iy > 0.7:
            return i
    return None


def step(world: WorldState, light_actions: Sequence[int],
         engine_actions: Sequence[int]) -> tuple[WorldState, StepEvents]:
    """Advance the world by one tick.

    ``light_actions`` align with ``world.lights`` and ``engine_actions`` with
    ``world.engine_ids``; actions for engines that already arrived are ignored.
    """
    if len(light_actions) != len(world.lights):
        raise SimError(f"expected {len(world.lights)} light actions, got {len(light_actions)}")
    if len(engine_actions) != len(world.engine_ids):
        raise SimError(
            f"expected {len(world.engine_ids)} engine actions, got {len(engine_actions)}")
    for a in light_actions:
        if a not in (HOLD, SWITCH):
            raise SimError(f"invalid light action {a!r}")
    for a in engine_actions:
        if not isinstance(a, (int, np.integer)) or a < 0:
            raise SimError(f"invalid engine action {a!r}")

    g = world.graph
    events = StepEvents()

    for light, act in zip(world.lights, light_actions):
        if act == SWITCH and light.time_in_phase >= light.min_green:
            light.phase = Phase.EW_GREEN if light.phase is Phase.NS_GREEN else Phase.NS_GREEN
            light.time_in_phase = 0
        else:
            light.time_in_phase += 1

    engine_action = dict(zip(world.engine_ids, (int(a) for a in engine_actions)))
    occ = world.occupancy
    edges = g.edges
    movers = [v for v in world.vehicles if v.active]
    movers.sort(key=lambda v: (edges[v.edge].length - v.progress, v.id))

    for v in movers:
        e = edges[v.edge]
        special = v.kind is Kind.SPECIAL
        if v.progress < e.length:
            if special and engine_action[v.id] == WAIT:
                continue
            target = (v.edge, v.progress + 1)
        elif special:
            act = engine_action[v.id]
            if act == WAIT:
                continue
            if act == CONTINUE:
                nxt = straight_edge(g, e)
            else:
                k = act - TURN_BASE
                outs = g.out_edges[e.dst]
                nxt = outs[k] if k < len(outs) else None
            if nxt is None:
                events.masked.append(v.id)
                continue
            target = (nxt.id, 1)
        else:
            if not approach_green(world, e):
                continue
            target = (v.route_edges[v.leg + 1], 1)

        other = occ.get(target)
        if other is not None:
            if special:
                events.collisions.append((v.id, other))
            continue

        del occ[(v.edge, v.progress)]
        if target[0] != v.edge:
            if special:
                v.route.append(edges[target[0]].dst)
            else:
                v.leg += 1
        v.edge, v.progress = target
        occ[target] = v.id

        ne = edges[v.edge]
        if v.progress == ne.length and ne.dst == v.destination and (
                special or v.leg == len(v.route_edges) - 1):
            v.active = False
            del occ[target]
            events.arrivals.append(v.id)

    world.tick += 1
    return world, events


def sense(world: WorldState, vehicle_id: int) -> RaySense:
    """Ray distances (capped at the sensing range) to the nearest occupied cell
    or dead end in four directions."""
    if not 0 <= vehicle_id < len(world.vehicles):
        raise SimError(f"unknown vehicle {vehicle_id!r}")
    v = world.vehicles[vehicle_id]
    if not v.active:
        raise SimError(f"vehicle {vehicle_id} is inactive")
    g = world.graph
    R = world.sense_range
    e = g.edges[v.edge]

    def forward(branch: Edge | None, own_edge: bool) -> int:
        # left/right rays look only at the side roads beyond the head node
        off = 0
        for cell in range(v.progress + 1, e.length + 1):
            off += 1
            if off > R:
                return R
            if own_edge and (e.id, cell) in world.occupancy:
                return off
        if branch is None:
            return min(off + 1, R)
        for cell in range(1, branch.length + 1):
            off += 1
            if off > R:
                return R
            if (branch.id, cell) in world.occupancy:
                return off
        return min(off, R)

    def backward() -> int:
        off = 0
        for cell in range(v.progress - 1, -1, -1):
            off += 1
            if off > R:
                return R
            if (e.id, cell) in world.occupancy:
                return off
        prev = _straight_predecessor(g, e)
        if prev is None:
            return min(off + 1, R)
        for cell in range(prev.length, 0, -1):
            off += 1
            if off > R:
                return R
            if (prev.id, cell) in world.occupancy:
                return off
        return min(off, R)

    return RaySense(
        ahead=forward(_branch(g, e, "straight"), True),
        behind=backward(),
        left=forward(_branch(g, e, "left"), False),
        right=forward(_branch(g, e, "right"), False),
        edge=v.edge,
        progress=v.progress,
        destination=v.destination,
    )


def is_terminal(world: WorldState) -> str | None:
    """``"AllArrived"`` or ``"Horizon"`` when the episode is over, else None."""
    if all(not world.vehicles[i].active for i in world.engine_ids):
        return "AllArrived"
    if world.tick >= world.max_steps:
        return "Horizon"
    return None


def snapshot(world: WorldState, events: StepEvents | None = None) -> dict:
    """Trace record for the current tick."""
    ev = events or StepEvents()
    return {
        "tick": world.tick,
        "vehicles": [
            {"id": v.id, "kind": v.kind.value, "edge": v.edge,
             "progress": v.progress, "active": v.active}
            for v in world.vehicles
        ],
        "lights": [
            {"node": lt.node, "phase": lt.phase.value, "time_in_phase": lt.time_in_phase}
            for lt in world.lights
        ],
        "events": {
            "arrivals": list(ev.arrivals),
            "collisions": [list(c) for c in ev.collisions],
            "masked": list(ev.masked),
        },
    }
