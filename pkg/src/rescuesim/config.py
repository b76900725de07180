"""Scenario and training configuration (JSON files, pydantic models)."""

from __future__ import annotations

import json
from functools import cached_property
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .rewards import RewardConfig
from .roadnet import RoadGraph, RoadNetError, build_grid
from .simcore import DEFAULT_MIN_GREEN, DEFAULT_SENSE_RANGE


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GridSpec(_Strict):
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    edge_len: int = Field(ge=1)


class GraphSpec(_Strict):
    """Either ``grid`` or explicit ``nodes`` ([x, y]) and ``edges`` ([from, to, length])."""

    grid: Optional[GridSpec] = None
    nodes: Optional[list[tuple[int, int]]] = None
    edges: Optional[list[tuple[int, int, int]]] = None

    @model_validator(mode="after")
    def _one_form(self):
        explicit = self.nodes is not None or self.edges is not None
        if (self.grid is None) == (not explicit):
            raise ValueError("graph: give either 'grid' or 'nodes' + 'edges'")
        if explicit and (self.nodes is None or self.edges is None):
            raise ValueError("graph: explicit graphs need both 'nodes' and 'edges'")
        return self

    def build(self) -> RoadGraph:
        if self.grid is not None:
            return build_grid(self.grid.width, self.grid.height, self.grid.edge_len)
        return RoadGraph.from_lists(self.nodes, self.edges)


class EngineStart(_Strict):
    """A start node, or an explicit ``edge`` id plus ``progress`` in cells."""

    node: Optional[int] = None
    edge: Optional[int] = None
    progress: Optional[int] = None

    @model_validator(mode="after")
    def _one_form(self):
        if (self.node is None) == (self.edge is None):
            raise ValueError("engine start needs exactly one of 'node' or 'edge'")
        if self.edge is not None and self.progress is None:
            raise ValueError("engine start on an edge needs 'progress'")
        return self


class LightSpec(_Strict):
    node: int
    min_green: int = Field(DEFAULT_MIN_GREEN, ge=0)


class NoisePlacement(_Strict):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    src: int = Field(alias="from")
    dst: int = Field(alias="to")
    count: int = Field(ge=0)


class ScenarioConfig(_Strict):
    graph: GraphSpec
    fire_target: int
    engines: list[EngineStart] = Field(min_length=1)
    lights: list[LightSpec] = Field(default_factory=list)
    ordinary_count: int = Field(0, ge=0)
    noise: list[NoisePlacement] = Field(default_factory=list)
    rewards: RewardConfig = Field(default_factory=RewardConfig)
    max_steps: int = Field(200, ge=0)
    sense_range: int = Field(DEFAULT_SENSE_RANGE, ge=0)
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)

    @model_validator(mode="after")
    def _references(self):
        try:
            g = self.graph.build()
        except RoadNetError as exc:
            raise ValueError(f"graph: {exc}") from None
        n = g.num_nodes

        def node_ok(path: str, v: int) -> None:
            if not 0 <= v < n:
                raise ValueError(f"{path}: node {v} does not exist")

        node_ok("fire_target", self.fire_target)
        for i, eng in enumerate(self.engines):
            if eng.node is not None:
                node_ok(f"engines[{i}].node", eng.node)
                if eng.node == self.fire_target:
                    raise ValueError(f"engines[{i}].node: start equals fire_target")
            else:
                if not 0 <= eng.edge < len(g.edges):
                    raise ValueError(f"engines[{i}].edge: edge {eng.edge} does not exist")
                e = g.edges[eng.edge]
                if not 0 <= eng.progress <= e.length:
                    raise ValueError(f"engines[{i}].progress: outside [0, {e.length}]")
                if eng.progress == e.length and e.dst == self.fire_target:
                    raise ValueError(f"engines[{i}]: start equals fire_target")
        seen = set()
        for i, lt in enumerate(self.lights):
            node_ok(f"lights[{i}].node", lt.node)
            if lt.node in seen:
                raise ValueError(f"lights[{i}].node: duplicate light at node {lt.node}")
            seen.add(lt.node)
        for i, p in enumerate(self.noise):
            if not g.has_edge(p.src, p.dst):
                raise ValueError(f"noise[{i}]: edge {p.src}->{p.dst} does not exist")
            cap = g.edge_between(p.src, p.dst).length
            if p.count > cap:
                raise ValueError(
                    f"noise[{i}].count: {p.count} vehicles exceed edge capacity {cap}")
        if self.ordinary_count and n < 2:
            raise ValueError("ordinary_count: needs a graph with >= 2 nodes")
        return self

    @cached_property
    def road_graph(self) -> RoadGraph:
        return self.graph.build()

    def dump(self) -> dict:
        return self.model_dump(mode="json", by_alias=True, exclude_none=True)


class TrainConfig(_Strict):
    strategy: Literal["qmix", "iql"] = "qmix"
    episodes: int = Field(100, ge=0)
    updates_per_episode: int = Field(24, ge=0)
    gamma: float = Field(0.99, ge=0, le=1)
    lr: float = Field(5e-4, gt=0)
    batch_size: int = Field(32, ge=1)
    buffer_size: int = Field(5000, ge=1)
    warmup: int = Field(500, ge=0)
    target_sync: int = Field(200, ge=1)
    eps_start: float = Field(1.0, ge=0, le=1)
    eps_end: float = Field(0.05, ge=0, le=1)
    eps_anneal_fraction: float = Field(0.8, ge=0, le=1)
    hidden: int = Field(64, ge=1)
    mixer_embed: int = Field(32, ge=1)
    grad_clip: float = Field(10.0, ge=0)
    double_q: bool = True
    seed: int = 0
    out_dir: Optional[str] = None


class ConfigError(ValueError):
    pass


def _read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_scenario(path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.model_validate(_read_json(path))


def load_train_config(path: str | Path) -> TrainConfig:
    return TrainConfig.model_validate(_read_json(path))
