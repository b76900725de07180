"""Fire-engine reward components and the shared team reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from pydantic import BaseModel, ConfigDict, Field


class RewardError(ValueError):
    pass


class RewardConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    goal_bonus: float = Field(100.0, ge=0)
    collision_penalty: float = Field(50.0, ge=0)
    step_penalty: float = Field(0.1, ge=0)
    approach_cap: float = Field(3.0, gt=0)
    alpha: float = Field(1.0, gt=0)


@dataclass(frozen=True)
class EngineRewardInput:
    prev_dist: float
    new_dist: float
    arrived: bool = False
    collided: bool = False


def approach_reward(prev_dist: float, new_dist: float, cfg: RewardConfig) -> float:
    """min(alpha * delta, cap) when the engine got closer, else 0."""
    delta = prev_dist - new_dist
    if delta <= 0:
        return 0.0
    return min(cfg.alpha * delta, cfg.approach_cap)


def engine_reward(inp: EngineRewardInput, cfg: RewardConfig | None = None) -> float:
    cfg = cfg or RewardConfig()
    if inp.prev_dist < 0 or inp.new_dist < 0:
        raise RewardError("distances must be non-negative")
    if inp.arrived and inp.new_dist != 0:
        raise RewardError("an arrived engine must be at distance 0")
    r = -cfg.step_penalty
    if inp.arrived:
        r += cfg.goal_bonus
    if inp.collided:
        r -= cfg.collision_penalty
    return r + approach_reward(inp.prev_dist, inp.new_dist, cfg)


def global_reward(inputs: Sequence[EngineRewardInput], cfg: RewardConfig | None = None) -> float:
    """Team reward: the sum over engines that were active when the step began."""
    if not inputs:
        raise RewardError("global reward needs at least one engine")
    cfg = cfg or RewardConfig()
    return sum(engine_reward(i, cfg) for i in inputs)
