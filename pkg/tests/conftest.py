import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rescuesim.config import ScenarioConfig  # noqa: E402
from rescuesim.roadnet import RoadGraph  # noqa: E402
from rescuesim.simcore import LightState, WorldState  # noqa: E402

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"


def line_graph(lengths, bidirectional=False):
    """Nodes 0..n along the x axis joined by edges of the given lengths."""
    nodes = [(i, 0) for i in range(len(lengths) + 1)]
    edges = [(i, i + 1, ln) for i, ln in enumerate(lengths)]
    if bidirectional:
        edges += [(i + 1, i, ln) for i, ln in enumerate(lengths)]
    return RoadGraph.from_lists(nodes, edges)


def make_world(graph, target, max_steps=50, lights=(), sense_range=5, seed=0):
    return WorldState(graph, target, max_steps, np.random.default_rng(seed),
                      sense_range=sense_range, lights=[LightState(n, min_green=m) for n, m in lights])


@pytest.fixture
def smoke_scenario():
    """One engine one cell short of the fire on a 3x3 grid of unit edges."""
    return ScenarioConfig.model_validate({
        "graph": {"grid": {"width": 3, "height": 3, "edge_len": 1}},
        "fire_target": 4,
        "engines": [{"node": 3}],
        "lights": [{"node": 4}, {"node": 1}],
        "max_steps": 20,
        "seeds": [0],
    })


@pytest.fixture
def small_scenario():
    return ScenarioConfig.model_validate({
        "graph": {"grid": {"width": 4, "height": 4, "edge_len": 2}},
        "fire_target": 15,
        "engines": [{"node": 0}, {"node": 3}],
        "lights": [{"node": 5}, {"node": 6}, {"node": 9}, {"node": 10}],
        "ordinary_count": 6,
        "noise": [{"from": 4, "to": 5, "count": 2}],
        "max_steps": 60,
        "seeds": [1, 2],
    })


ONE_CELL = {
    "graph": {"nodes": [[0, 0], [1, 0], [2, 0]], "edges": [[0, 1, 2], [1, 2, 2]]},
    "fire_target": 2,
    "engines": [{"edge": 1, "progress": 1}],
    "max_steps": 10,
    "seeds": [0],
}


@pytest.fixture
def one_cell_scenario():
    """A lone engine one cell short of the fire on a straight road."""
    return ScenarioConfig.model_validate(ONE_CELL)


class FixedQ:
    """Stands in for a model: every agent reports the same preset Q-values."""

    def __init__(self, q):
        self.q = np.asarray(q, dtype=float)

    def q_values(self, observations):
        return [self.q.copy() for _ in observations]


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(acceptance.RESULTS):
        terminalreporter.write_line(line)
