"""Request and response bodies for the v1 environment protocol."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class Wire(BaseModel):
    model_config = ConfigDict(extra="forbid")


class AgentInfo(Wire):
    agent_id: str
    kind: Literal["FireEngine", "TrafficLight"]
    obs_dim: int
    action_count: int


class EnvSpec(Wire):
    agents: list[AgentInfo]
    state_dim: int
    max_steps: int
    seeds: list[int]


class SessionCreated(Wire):
    session_id: str
    spec: EnvSpec


class ResetResponse(Wire):
    observations: dict[str, list[float]]
    global_state: list[float]


class StepRequest(Wire):
    actions: dict[str, int] = Field(description="action index per agent id")


class Event(Wire):
    type: Literal["arrival", "collision", "masked"]
    vehicles: list[int]


class StepResponse(Wire):
    observations: dict[str, list[float]]
    reward: float
    done: bool
    events: list[Event]
    global_state: list[float]


class ErrorBody(Wire):
    detail: str | list | dict
