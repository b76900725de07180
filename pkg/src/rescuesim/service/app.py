"""HTTP/JSON environment server: sessions own a world and serialize access to it."""

from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass, field
from typing import Any, Optional

from fastapi import Body, FastAPI, HTTPException
from pydantic import ValidationError

from ..config import ScenarioConfig
from ..env import EnvError, RescueEnv
from ..simcore import SimError, StepEvents, snapshot
from .schemas import AgentInfo, EnvSpec, Event, ResetResponse, SessionCreated, StepRequest, StepResponse

log = logging.getLogger(__name__)

DEFAULT_MAX_SESSIONS = 16


@dataclass
class Session:
    id: str
    scenario: ScenarioConfig
    env: RescueEnv
    resets: int = 0
    status: str = "running"
    last_events: Optional[StepEvents] = None
    lock: threading.Lock = field(default_factory=threading.Lock)

    @property
    def step_counter(self) -> int:
        return self.env.world.tick

    def reset(self) -> None:
        seeds = self.scenario.seeds
        self.env.reset(seeds[self.resets % len(seeds)])
        self.resets += 1
        self.last_events = None
        self.status = "done" if self.env.done else "running"


def events_to_wire(ev: StepEvents) -> list[Event]:
    out = [Event(type="arrival", vehicles=[v]) for v in ev.arrivals]
    out += [Event(type="collision", vehicles=list(c)) for c in ev.collisions]
    out += [Event(type="masked", vehicles=[v]) for v in ev.masked]
    return out


def observations_to_wire(env: RescueEnv, obs) -> dict[str, list[float]]:
    return {a.agent_id: [float(x) for x in o] for a, o in zip(env.agents, obs)}


def env_spec(env: RescueEnv) -> EnvSpec:
    return EnvSpec(
        agents=[AgentInfo(agent_id=a.agent_id, kind=a.kind, obs_dim=a.obs_dim,
                          action_count=a.action_count) for a in env.agents],
        state_dim=env.state_dim,
        max_steps=env.scenario.max_steps,
        seeds=list(env.scenario.seeds),
    )


def create_app(default_scenario: ScenarioConfig | None = None,
               max_sessions: int = DEFAULT_MAX_SESSIONS) -> FastAPI:
    """Build the v1 app.

    ``POST /v1/session`` with an empty body falls back to ``default_scenario``.
    Session creation resets the world with the first seed of the scenario's
    seed list; every later reset takes the next seed, cycling.
    """
    app = FastAPI(title="rescuesim environment server", version="1")
    sessions: dict[str, Session] = {}
    registry_lock = threading.Lock()
    app.state.sessions = sessions

    def get_session(session_id: str) -> Session:
        with registry_lock:
            s = sessions.get(session_id)
        if s is None:
            raise HTTPException(404, f"unknown session {session_id!r}")
        return s

    @app.post("/v1/session", response_model=SessionCreated)
    def create_session(body: dict[str, Any] = Body(default_factory=dict)):
        if not body:
            if default_scenario is None:
                raise HTTPException(400, "request body must be a scenario")
            scenario = default_scenario
        else:
            try:
                scenario = ScenarioConfig.model_validate(body)
            except ValidationError as exc:
                raise HTTPException(400, "; ".join(e["msg"] for e in exc.errors())) from None
        try:
            env = RescueEnv(scenario)
            session = Session(uuid.uuid4().hex, scenario, env)
            session.reset()
        except (SimError, EnvError, ValueError) as exc:
            raise HTTPException(400, str(exc)) from None
        with registry_lock:
            if len(sessions) >= max_sessions:
                raise HTTPException(409, f"session limit of {max_sessions} reached")
            sessions[session.id] = session
        return SessionCreated(session_id=session.id, spec=env_spec(env))

    @app.delete("/v1/session/{session_id}")
    def close_session(session_id: str):
        with registry_lock:
            if sessions.pop(session_id, None) is None:
                raise HTTPException(404, f"unknown session {session_id!r}")
        return {"closed": session_id}

    @app.post("/v1/session/{session_id}/reset", response_model=ResetResponse)
    def reset(session_id: str):
        s = get_session(session_id)
        with s.lock:
            s.reset()
            obs = s.env.observations()
            return ResetResponse(observations=observations_to_wire(s.env, obs),
                                 global_state=[float(x) for x in s.env.global_state(obs)])

    @app.post("/v1/session/{session_id}/step", response_model=StepResponse)
    def step(session_id: str, req: StepRequest):
        s = get_session(session_id)
        with s.lock:
            env = s.env
            if env.done:
                raise HTTPException(409, "episode is done; reset the session")
            ids = [a.agent_id for a in env.agents]
            missing = [i for i in ids if i not in req.actions]
            unknown = sorted(set(req.actions) - set(ids))
            if missing or unknown:
                raise HTTPException(422, {"missing": missing, "unknown": unknown})
            bad = [i for i, a in zip(ids, env.agents)
                   if not 0 <= req.actions[i] < a.action_count]
            if bad:
                raise HTTPException(422, {"out_of_range": bad})
            res = env.step([req.actions[i] for i in ids])
            s.last_events = res.events
            s.status = "done" if res.done else "running"
            return StepResponse(
                observations=observations_to_wire(env, res.observations),
                reward=float(res.reward),
                done=res.done,
                events=events_to_wire(res.events),
                global_state=[float(x) for x in res.global_state],
            )

    @app.get("/v1/session/{session_id}/state")
    def state(session_id: str):
        s = get_session(session_id)
        with s.lock:
            rec = snapshot(s.env.world, s.last_events)
            rec["status"] = s.status
            return rec

    return app
