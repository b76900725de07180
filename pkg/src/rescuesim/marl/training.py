"""Episode rollouts, the training loop and greedy evaluation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..config import ScenarioConfig, TrainConfig
from ..env import RescueEnv
from ..nnet import TrainingDivergence
from ..simcore import WAIT
from .models import Hyper, make_model, select_actions
from .replay import JointTransition, ReplayBuffer, collate

log = logging.getLogger(__name__)


@dataclass
class EpisodeResult:
    episode_return: float
    transitions: list[JointTransition]
    trace: list[dict]
    steps: int
    reason: Optional[str]
    # tick at which each engine arrived (None if it never did)
    arrival_ticks: list[Optional[int]]
    collisions: int


@dataclass
class TrainLog:
    strategy: str
    rows: list[dict] = field(default_factory=list)

    def returns(self) -> list[float]:
        return [r["return"] for r in self.rows]


class TrainingError(RuntimeError):
    def __init__(self, episode: int, cause: Exception):
        super().__init__(f"training diverged at episode {episode}: {cause}")
        self.episode = episode


def run_episode(env: RescueEnv, model, epsilon: float, rng: np.random.Generator,
                seed: int | None = None, trace_sink: Callable[[dict], None] | None = None,
                keep_trace: bool = False, record: bool = True) -> EpisodeResult:
    """Reset, then act until the world reports a terminal state."""
    obs = env.reset(seed)
    state = env.global_state(obs)
    mask = env.active_mask()
    trace: list[dict] = []
    total = 0.0

    def emit(rec: dict) -> None:
        if keep_trace:
            trace.append(rec)
        if trace_sink is not None:
            trace_sink(rec)

    if keep_trace or trace_sink is not None:
        emit(env.trace_record())
    transitions = []
    arrivals: list[Optional[int]] = [None] * env.n_engines
    engine_index = {vid: i for i, vid in enumerate(env.world.engine_ids)}
    collisions = steps = 0
    while not env.done:
        actions = select_actions(model, obs, epsilon, rng, mask=mask, idle_action=WAIT)
        res = env.step(actions)
        total += res.reward
        steps += 1
        collisions += len(res.events.collisions)
        for vid in res.events.arrivals:
            if vid in engine_index:
                arrivals[engine_index[vid]] = env.world.tick
        next_mask = env.active_mask()
        if record:
            transitions.append(JointTransition(
                obs, np.array(actions), res.reward, res.observations, state,
                res.global_state, res.done, mask, next_mask))
        if keep_trace or trace_sink is not None:
            emit(env.trace_record(res.events, res.reward, total))
        obs, state, mask = res.observations, res.global_state, next_mask
    return EpisodeResult(total, transitions, trace, steps, env.reason, arrivals, collisions)


def epsilon_at(cfg: TrainConfig, episode: int) -> float:
    span = cfg.eps_anneal_fraction * cfg.episodes
    if span <= 0:
        return cfg.eps_end
    frac = min(episode / span, 1.0)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def build_model(scenario: ScenarioConfig, cfg: TrainConfig, env: RescueEnv | None = None):
    env = env or RescueEnv(scenario)
    rng = np.random.default_rng(cfg.seed)
    return make_model(cfg.strategy, env.agents, env.state_dim, Hyper.from_config(cfg), rng)


def train(scenario: ScenarioConfig, cfg: TrainConfig,
          on_episode: Callable[[dict], None] | None = None):
    """Run ``cfg.episodes`` episodes; returns (model, TrainLog).

    Episode ``k`` uses world seed ``scenario.seeds[k % len(seeds)]``. After
    each episode the transitions go to replay and, once ``warmup``
    transitions are stored, ``updates_per_episode`` TD updates run.
    """
    env = RescueEnv(scenario)
    model = build_model(scenario, cfg, env)
    # separate streams: acting and replay sampling must not perturb each other
    act_rng, sample_rng = (np.random.default_rng(s) for s in
                           np.random.SeedSequence(cfg.seed).spawn(2))
    buffer = ReplayBuffer(cfg.buffer_size)
    log_ = TrainLog(cfg.strategy)
    seeds = scenario.seeds
    for ep in range(cfg.episodes):
        eps = epsilon_at(cfg, ep)
        try:
            result = run_episode(env, model, eps, act_rng, seed=seeds[ep % len(seeds)])
            buffer.extend(result.transitions)
            losses = []
            if len(buffer) >= max(cfg.warmup, cfg.batch_size):
                for _ in range(cfg.updates_per_episode):
                    batch = collate(buffer.sample(cfg.batch_size, sample_rng))
                    loss = model.train_step(batch)
                    losses.append(float(np.mean(loss)))
                    if model.train_steps % cfg.target_sync == 0:
                        model.sync_target()
        except TrainingDivergence as exc:
            raise TrainingError(ep, exc) from exc
        row = {"episode": ep, "strategy": cfg.strategy,
               "return": result.episode_return,
               "mean_loss": float(np.mean(losses)) if losses else float("nan"),
               "epsilon": eps}
        log_.rows.append(row)
        if on_episode is not None:
            on_episode(row)
    return model, log_


@dataclass
class EvalSummary:
    episodes: list[dict]
    mean_return: Optional[float]
    mean_steps_to_arrival: Optional[float]
    collisions: int

    def as_dict(self) -> dict:
        return {"episodes": self.episodes, "mean_return": self.mean_return,
                "mean_steps_to_arrival": self.mean_steps_to_arrival,
                "collisions": self.collisions}


def evaluate(env: RescueEnv, model, episodes: int, seed: int = 0) -> EvalSummary:
    """Greedy rollouts reporting return, per-engine arrival ticks and collisions."""
    rng = np.random.default_rng(seed)
    seeds = env.scenario.seeds
    rows = []
    arrivals = []
    collisions = 0
    for k in range(episodes):
        res = run_episode(env, model, 0.0, rng, seed=seeds[k % len(seeds)], record=False)
        rows.append({"episode": k, "return": res.episode_return, "steps": res.steps,
                     "arrival_ticks": res.arrival_ticks, "collisions": res.collisions,
                     "reason": res.reason})
        arrivals += [t for t in res.arrival_ticks if t is not None]
        collisions += res.collisions
    return EvalSummary(
        rows,
        float(np.mean([r["return"] for r in rows])) if rows else None,
        float(np.mean(arrivals)) if arrivals else None,
        collisions,
    )
