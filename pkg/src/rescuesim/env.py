"""Multi-agent environment over the simulator: agent specs, observation
encoding, team reward and episode traces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import simcore
from .config import ScenarioConfig
from .rewards import EngineRewardInput, global_reward
from .roadnet import graph_distance
from .simcore import Kind, Phase, StepEvents, WorldState

FIRE_ENGINE = "FireEngine"
TRAFFIC_LIGHT = "TrafficLight"

ENGINE_OBS_DIM = 15
LIGHT_OBS_DIM = 12

# compass order used for headings and approaches; screen coordinates, y down
_SIDES = ((0, -1), (1, 0), (0, 1), (-1, 0))


class EnvError(ValueError):
    pass


class EpisodeDone(RuntimeError):
    pass


@dataclass(frozen=True)
class AgentSpec:
    agent_id: str
    kind: str
    obs_dim: int
    action_count: int
    # engine: position in world.engine_ids; light: position in world.lights
    index: int


@dataclass
class StepResult:
    observations: list[np.ndarray]
    reward: float
    done: bool
    events: StepEvents
    reason: str | None
    global_state: np.ndarray
    engine_inputs: list[EngineRewardInput] = field(default_factory=list)


def _side(dx: float, dy: float) -> int:
    best, idx = -2.0, 0
    for i, (sx, sy) in enumerate(_SIDES):
        d = sx * dx + sy * dy
        if d > best:
            best, idx = d, i
    return idx


def build_world(scenario: ScenarioConfig, seed: int) -> WorldState:
    """Fresh tick-0 world: engines, then noise queues, then ordinary traffic."""
    g = scenario.road_graph
    rng = np.random.default_rng(seed)
    lights = [simcore.LightState(lt.node, min_green=lt.min_green) for lt in scenario.lights]
    world = WorldState(g, scenario.fire_target, scenario.max_steps, rng,
                       sense_range=scenario.sense_range, lights=lights)
    for eng in scenario.engines:
        world.add_engine(node=eng.node, edge=eng.edge, progress=eng.progress)
    placements = [(g.edge_between(p.src, p.dst).id, p.count) for p in scenario.noise]
    simcore.spawn_noise(world, placements, rng)
    simcore.spawn_ordinary(world, scenario.ordinary_count, rng)
    return world


class RescueEnv:
    """Fire engines and traffic lights acting on one scenario.

    Agents are ordered engines first, then lights. Actions are integer
    indices; an engine's are Continue, Wait, then one turn choice per
    outgoing road (up to the graph's maximum out-degree).
    """

    def __init__(self, scenario: ScenarioConfig):
        self.scenario = scenario
        self.graph = g = scenario.road_graph
        self.reward_cfg = scenario.rewards
        xs = [c[0] for c in g.coords]
        ys = [c[1] for c in g.coords]
        self._xlo, self._xspan = min(xs), max(max(xs) - min(xs), 1)
        self._ylo, self._yspan = min(ys), max(max(ys) - min(ys), 1)
        max_len = max((e.length for e in g.edges), default=1)
        to_target = [d for d in g.distances_to(scenario.fire_target) if not math.isinf(d)]
        self._dnorm = max(max(to_target) + max_len, 1)
        finite = [d for n in range(g.num_nodes) for d in g.distances_to(n) if not math.isinf(d)]
        self._diam = max(max(finite, default=0) + max_len, 1)
        self.max_turns = max((len(o) for o in g.out_edges), default=0)
        self._edge_side = [_side(*g.direction(e)) for e in g.edges]
        # side of the node each incoming road arrives from, per light
        self._approaches = []
        for lt in scenario.lights:
            rows = []
            for e in g.in_edges[lt.node]:
                (x0, y0), (x1, y1) = g.coords[e.src], g.coords[e.dst]
                rows.append((e.id, e.length, _side(x0 - x1, y0 - y1)))
            self._approaches.append(rows)

        specs = []
        for i in range(len(scenario.engines)):
            specs.append(AgentSpec(f"engine_{i}", FIRE_ENGINE, ENGINE_OBS_DIM,
                                   simcore.TURN_BASE + self.max_turns, i))
        for i, lt in enumerate(scenario.lights):
            specs.append(AgentSpec(f"light_{lt.node}", TRAFFIC_LIGHT, LIGHT_OBS_DIM, 2, i))
        self.agents: list[AgentSpec] = specs
        self.n_engines = len(scenario.engines)
        self.world: WorldState | None = None
        self.done = False
        self.reason: str | None = None

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def state_dim(self) -> int:
        return sum(a.obs_dim for a in self.agents) + 1

    def reset(self, seed: int | None = None) -> list[np.ndarray]:
        if seed is None:
            seed = self.scenario.seeds[0]
        self.world = build_world(self.scenario, seed)
        self.reason = simcore.is_terminal(self.world)
        self.done = self.reason is not None
        return self.observations()

    def _world(self) -> WorldState:
        if self.world is None:
            raise EnvError("environment has not been reset")
        return self.world

    # -- observations ---------------------------------------------------------

    def _xy(self, x: float, y: float) -> tuple[float, float]:
        return (2.0 * (x - self._xlo) / self._xspan - 1.0,
                2.0 * (y - self._ylo) / self._yspan - 1.0)

    def _position(self, v: simcore.VehicleState) -> tuple[float, float]:
        e = self.graph.edges[v.edge]
        (x0, y0), (x1, y1) = self.graph.coords[e.src], self.graph.coords[e.dst]
        t = v.progress / e.length
        return (x0 + t * (x1 - x0), y0 + t * (y1 - y0))

    def encode_observation(self, agent: AgentSpec | int) -> np.ndarray:
        world = self._world()
        if isinstance(agent, int):
            if not 0 <= agent < self.n_agents:
                raise EnvError(f"unknown agent index {agent}")
            agent = self.agents[agent]
        if agent not in self.agents:
            raise EnvError(f"unknown agent {agent.agent_id!r}")
        if agent.kind == FIRE_ENGINE:
            return self._engine_obs(world, agent.index)
        return self._light_obs(world, agent.index)

    def _engine_obs(self, world: WorldState, index: int) -> np.ndarray:
        v = world.vehicles[world.engine_ids[index]]
        obs = np.zeros(ENGINE_OBS_DIM)
        if not v.active:
            return obs
        g = self.graph
        e = g.edges[v.edge]
        R = world.sense_range
        obs[0] = 1.0
        obs[1:3] = self._xy(*self._position(v))
        obs[3:5] = self._xy(*g.coords[v.destination])
        obs[5] = world.distance_to_target(v) / self._dnorm
        if R > 0:
            obs[6:10] = np.array(simcore.sense(world, v.id).distances(), dtype=float) / R
        obs[10 + self._edge_side[e.id]] = 1.0
        obs[14] = 1.0 if v.progress == e.length else 0.0
        return obs

    def _light_obs(self, world: WorldState, index: int) -> np.ndarray:
        light = world.lights[index]
        g = self.graph
        obs = np.zeros(LIGHT_OBS_DIM)
        obs[0 if light.phase is Phase.NS_GREEN else 1] = 1.0
        obs[2] = 1.0 if light.min_green == 0 else min(light.time_in_phase / light.min_green, 1.0)
        occ = world.occupancy
        approaches = self._approaches[index]
        for eid, length, side in approaches:
            q = sum(1 for c in range(length + 1) if (eid, c) in occ)
            obs[3 + side] = min(obs[3 + side] + q / (length + 1), 1.0)
        nearest = None
        for v in world.engines:
            if not v.active:
                continue
            d = graph_distance(g, v.edge, v.progress, light.node)
            if nearest is None or d < nearest:
                nearest = d
            for eid, _, side in approaches:
                if eid == v.edge:
                    obs[8 + side] = 1.0
        obs[7] = 1.0 if nearest is None else min(nearest / self._diam, 1.0)
        return obs

    def observations(self) -> list[np.ndarray]:
        return [self.encode_observation(a) for a in self.agents]

    def global_state(self, observations: Sequence[np.ndarray] | None = None) -> np.ndarray:
        world = self._world()
        obs = self.observations() if observations is None else observations
        frac = 1.0 if world.max_steps == 0 else min(world.tick / world.max_steps, 1.0)
        return np.concatenate([*obs, [frac]])

    def active_mask(self) -> np.ndarray:
        """1 for agents that act this tick (arrived engines are excluded)."""
        world = self._world()
        mask = np.ones(self.n_agents)
        for i in range(self.n_engines):
            if not world.vehicles[world.engine_ids[i]].active:
                mask[i] = 0.0
        return mask

    # -- dynamics ---------------------------------------------------------------

    def step(self, actions: Sequence[int]) -> StepResult:
        world = self._world()
        if self.done:
            raise EpisodeDone("episode already finished; reset first")
        if len(actions) != self.n_agents:
            raise EnvError(f"expected {self.n_agents} actions, got {len(actions)}")
        for spec, a in zip(self.agents, actions):
            if not 0 <= int(a) < spec.action_count:
                raise EnvError(f"action {a} out of range for {spec.agent_id}")
        engine_actions = [int(a) for a in actions[:self.n_engines]]
        light_actions = [int(a) for a in actions[self.n_engines:]]

        acting = [world.vehicles[i] for i in world.engine_ids if world.vehicles[i].active]
        prev = {v.id: world.distance_to_target(v) for v in acting}
        _, events = simcore.step(world, light_actions, engine_actions)
        collided = {c[0] for c in events.collisions}
        arrived = set(events.arrivals)
        inputs = [EngineRewardInput(prev[v.id], world.distance_to_target(v),
                                    arrived=v.id in arrived, collided=v.id in collided)
                  for v in acting]
        reward = global_reward(inputs, self.reward_cfg) if inputs else 0.0
        self.reason = simcore.is_terminal(world)
        self.done = self.reason is not None
        obs = self.observations()
        return StepResult(obs, reward, self.done, events, self.reason,
                          self.global_state(obs), inputs)

    def trace_record(self, events: StepEvents | None = None, reward: float = 0.0,
                     episode_return: float = 0.0) -> dict:
        world = self._world()
        rec = simcore.snapshot(world, events)
        rec["distances"] = {str(i): world.distance_to_target(world.vehicles[vid])
                            for i, vid in enumerate(world.engine_ids)}
        rec["reward"] = reward
        rec["return"] = episode_return
        return rec
