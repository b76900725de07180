import numpy as np
import pytest

from conftest import line_graph, make_world
from oracles import best_path
from rescuesim import simcore
from rescuesim.roadnet import build_grid, shortest_path
from rescuesim.simcore import (CONTINUE, HOLD, SWITCH, TURN_BASE, WAIT, Kind, Phase, SimError,
                               is_terminal, sense, snapshot, spawn_noise, spawn_ordinary, step)


def test_empty_world_step():
    w = make_world(line_graph([3]), 1)
    _, ev = step(w, [], [])
    assert w.tick == 1
    assert ev.arrivals == [] and ev.collisions == [] and ev.masked == []


def test_ordinary_advances_one_cell():
    w = make_world(line_graph([5, 5]), 2)
    vid = w.add_routed(Kind.ORDINARY, [0, 1, 2], progress=2)
    step(w, [], [])
    v = w.vehicles[vid]
    assert (v.edge, v.progress) == (0, 3)
    assert w.occupancy == {(0, 3): vid}


def test_engine_collides_with_queued_noise_vehicle():
    # light at node 1 shows NS green, so the east-bound noise vehicle waits on the stop line
    w = make_world(line_graph([3, 3]), 2, lights=[(1, 5)])
    eng = w.add_engine(edge=0, progress=2)
    noise = w.add_routed(Kind.NOISE, [0, 1, 2], progress=0)
    w.vehicles[noise].progress = 3
    w.occupancy = {(0, 2): eng, (0, 3): noise}
    _, ev = step(w, [HOLD], [CONTINUE])
    assert ev.collisions == [(eng, noise)]
    assert (w.vehicles[eng].edge, w.vehicles[eng].progress) == (0, 2)
    assert (w.vehicles[noise].edge, w.vehicles[noise].progress) == (0, 3)


def test_switch_masked_before_min_green():
    w = make_world(line_graph([3]), 1, lights=[(0, 5)])
    w.lights[0].time_in_phase = 2
    step(w, [SWITCH], [])
    assert w.lights[0].phase is Phase.NS_GREEN
    assert w.lights[0].time_in_phase == 3


def test_switch_honoured_after_min_green():
    w = make_world(line_graph([3]), 1, lights=[(0, 5)])
    w.lights[0].time_in_phase = 5
    step(w, [SWITCH], [])
    assert w.lights[0].phase is Phase.EW_GREEN and w.lights[0].time_in_phase == 0


def test_red_light_holds_ordinary_but_not_engine():
    w = make_world(line_graph([2, 2]), 2, lights=[(1, 5)])
    car = w.add_routed(Kind.ORDINARY, [0, 1, 2], progress=1)
    step(w, [HOLD], [])
    step(w, [HOLD], [])
    assert (w.vehicles[car].edge, w.vehicles[car].progress) == (0, 2)  # red for east-west

    w2 = make_world(line_graph([2, 2], bidirectional=True), 2, lights=[(1, 5)])
    eng = w2.add_engine(edge=0, progress=2)
    turns = [o.dst for o in w2.graph.out_edges[1]]
    _, ev = step(w2, [HOLD], [TURN_BASE + turns.index(2)])
    v = w2.vehicles[eng]
    assert w2.graph.edges[v.edge].dst == 2 and v.progress == 1
    assert v.route == [0, 1, 2]


def test_turn_choices_follow_target_id_order():
    g = build_grid(3, 3, 2)
    w = make_world(g, 8)
    into_center = g.edge_between(3, 4)
    eng = w.add_engine(edge=into_center.id, progress=2)
    # outgoing targets of node 4 sorted: 1, 3, 5, 7
    step(w, [], [TURN_BASE + 3])
    v = w.vehicles[eng]
    assert (g.edges[v.edge].src, g.edges[v.edge].dst, v.progress) == (4, 7, 1)


def test_out_of_range_turn_and_dead_end_are_masked_to_wait():
    g = line_graph([2, 2], bidirectional=True)
    w = make_world(g, 0)
    eng = w.add_engine(edge=g.edge_between(1, 2).id, progress=2)
    _, ev = step(w, [], [TURN_BASE + 3])
    assert ev.masked == [eng]
    _, ev = step(w, [], [CONTINUE])  # no straight road beyond node 2
    assert ev.masked == [eng]
    v = w.vehicles[eng]
    assert (v.edge, v.progress) == (g.edge_between(1, 2).id, 2)
    _, ev = step(w, [], [WAIT])
    assert ev.masked == []


def test_arrival_deactivates_and_frees_cell():
    w = make_world(line_graph([2]), 1, max_steps=10)
    eng = w.add_engine(edge=0, progress=1)
    car = w.add_routed(Kind.ORDINARY, [0, 1], progress=0)
    _, ev = step(w, [], [CONTINUE])
    assert ev.arrivals == [eng]
    assert not w.vehicles[eng].active
    assert (0, 2) not in w.occupancy
    assert w.vehicles[car].progress == 1
    _, ev = step(w, [], [CONTINUE])
    assert ev.arrivals == [car]
    assert is_terminal(w) == "AllArrived"


def test_action_length_mismatch():
    w = make_world(line_graph([2]), 1, lights=[(0, 5)])
    w.add_engine(edge=0, progress=0)
    with pytest.raises(SimError):
        step(w, [], [CONTINUE])
    with pytest.raises(SimError):
        step(w, [HOLD], [])


# -- spawning --------------------------------------------------------------------

def test_spawn_ordinary_zero_is_noop():
    w = make_world(build_grid(3, 3, 2), 8)
    spawn_ordinary(w, 0, np.random.default_rng(0))
    assert w.vehicles == []


def test_spawn_ordinary_routes_are_shortest():
    g = build_grid(3, 3, 2)
    edges = [(e.src, e.dst, e.length) for e in g.edges]
    w = make_world(g, 8)
    spawn_ordinary(w, 10, np.random.default_rng(42))
    assert len(w.vehicles) == 10
    for v in w.vehicles:
        assert v.kind is Kind.ORDINARY and v.progress == 0
        assert v.route[0] != v.destination
        length, nodes = best_path(edges, v.route[0], v.destination)
        assert tuple(v.route) == nodes
        assert g.edges[v.edge].src == v.route[0]


def test_spawn_ordinary_is_seeded():
    def build():
        w = make_world(build_grid(3, 3, 2), 8)
        spawn_ordinary(w, 10, np.random.default_rng(42))
        return [(v.route, v.edge) for v in w.vehicles]

    assert build() == build()


def test_spawn_noise_fills_cells():
    g = line_graph([5, 2], bidirectional=True)
    w = make_world(g, 2)
    spawn_noise(w, [], np.random.default_rng(0))
    assert w.vehicles == []
    e = g.edge_between(0, 1)
    spawn_noise(w, [(e.id, 5)], np.random.default_rng(0))
    assert sorted(c for (eid, c) in w.occupancy if eid == e.id) == [0, 1, 2, 3, 4]
    assert all(v.kind is Kind.NOISE and v.destination == 2 for v in w.vehicles)


def test_spawn_noise_over_capacity():
    g = line_graph([3])
    w = make_world(g, 1)
    with pytest.raises(SimError, match="exceeds capacity"):
        spawn_noise(w, [(0, 4)], np.random.default_rng(0))


# -- sensing ---------------------------------------------------------------------

def test_sense_alone_on_long_edge():
    g = line_graph([20, 20])
    w = make_world(g, 2, sense_range=5)
    eng = w.add_engine(edge=1, progress=8)
    assert sense(w, eng).distances() == (5, 5, 5, 5)


def test_sense_vehicle_two_ahead():
    g = line_graph([20, 20])
    w = make_world(g, 2, sense_range=5)
    eng = w.add_engine(edge=1, progress=8)
    w.add_routed(Kind.ORDINARY, [1, 2], progress=10)
    assert sense(w, eng).distances() == (2, 5, 5, 5)


def test_sense_zero_range():
    g = build_grid(3, 3, 2)
    w = make_world(g, 8, sense_range=0)
    eng = w.add_engine(node=4)
    assert sense(w, eng).distances() == (0, 0, 0, 0)


def test_sense_side_roads_and_dead_ends():
    g = build_grid(3, 3, 2)
    w = make_world(g, 8, sense_range=5)
    east = g.edge_between(3, 4)
    eng = w.add_engine(edge=east.id, progress=2)
    # heading east into node 4; screen-left is north (node 1), right is south (node 7)
    w.add_routed(Kind.ORDINARY, [4, 1], progress=0)
    w.vehicles[-1].progress = 1
    w.occupancy = {(east.id, 2): eng, (g.edge_between(4, 1).id, 1): 1}
    rs = sense(w, eng)
    assert rs.left == 1 and rs.right == 2 and rs.ahead == 2
    corner = make_world(g, 8)
    c = corner.add_engine(edge=g.edge_between(1, 0).id, progress=2)
    # heading west into the corner: no straight road, no screen-right (north) road
    rs = sense(corner, c)
    assert rs.ahead == 1 and rs.right == 1


def test_sense_inactive_vehicle_rejected():
    w = make_world(line_graph([1]), 1)
    eng = w.add_engine(edge=0, progress=0)
    step(w, [], [CONTINUE])
    with pytest.raises(SimError):
        sense(w, eng)


# -- termination -----------------------------------------------------------------

def test_terminal_states():
    w = make_world(line_graph([3]), 1, max_steps=2)
    eng = w.add_engine(edge=0, progress=0)
    assert is_terminal(w) is None
    w.tick = 2
    assert is_terminal(w) == "Horizon"
    w.vehicles[eng].active = False
    assert is_terminal(w) == "AllArrived"


# -- invariants under random actions ---------------------------------------------

def _fuzz_world(seed):
    g = build_grid(5, 5, 3)
    w = make_world(g, 24, max_steps=10_000, lights=[(6, 5), (12, 3), (18, 5)], seed=seed)
    w.add_engine(node=0)
    w.add_engine(node=4)
    spawn_noise(w, [(g.edge_between(11, 12).id, 3), (g.edge_between(7, 12).id, 2)], w.rng)
    spawn_ordinary(w, 25, w.rng)
    return w


def _check_occupancy(w):
    cells = [(v.edge, v.progress) for v in w.vehicles if v.active]
    assert len(cells) == len(set(cells))
    assert dict(zip(cells, (v.id for v in w.vehicles if v.active))) == w.occupancy
    for v in w.vehicles:
        assert 0 <= v.progress <= w.graph.edges[v.edge].length


def test_randomized_fuzz_invariants():
    w = _fuzz_world(3)
    rng = np.random.default_rng(99)
    n_vehicles = len(w.vehicles)
    routes = {v.id: tuple(v.route) for v in w.vehicles if v.kind is not Kind.SPECIAL}
    visited = {vid: [w.graph.edges[w.vehicles[vid].edge].src, w.graph.edges[w.vehicles[vid].edge].dst]
               for vid in routes}
    was_inactive = set()
    _check_occupancy(w)
    for t in range(1000):
        before = [(lt.phase, lt.time_in_phase) for lt in w.lights]
        lights = [int(a) for a in rng.integers(0, 2, len(w.lights))]
        engines = [int(a) for a in rng.integers(0, 6, 2)]
        step(w, lights, engines)
        assert w.tick == t + 1
        for (phase, tip), lt in zip(before, w.lights):
            if lt.phase is not phase:
                assert tip >= lt.min_green and lt.time_in_phase == 0
        _check_occupancy(w)
        assert len(w.vehicles) == n_vehicles
        for v in w.vehicles:
            if v.id in was_inactive:
                assert not v.active
            if not v.active:
                was_inactive.add(v.id)
            if v.id in routes:
                head = w.graph.edges[v.edge].dst
                if visited[v.id][-1] != head:
                    visited[v.id].append(head)
                assert tuple(v.route) == routes[v.id]
                assert routes[v.id][:len(visited[v.id])] == tuple(visited[v.id])


def test_identical_seed_and_actions_give_identical_states():
    def run():
        w = _fuzz_world(5)
        rng = np.random.default_rng(1)
        states = []
        for _ in range(200):
            step(w, [int(a) for a in rng.integers(0, 2, 3)],
                 [int(a) for a in rng.integers(0, 6, 2)])
            states.append(snapshot(w))
        return states

    assert run() == run()
