"""Thin HTTP client for the environment server."""

from __future__ import annotations

from typing import Any

import httpx
import numpy as np


class RemoteError(RuntimeError):
    def __init__(self, status: int, detail: Any):
        super().__init__(f"HTTP {status}: {detail}")
        self.status = status
        self.detail = detail


class RemoteEnv:
    """Drive one server-side session.

    ``http`` is anything with httpx-style ``post``/``get`` (an ``httpx.Client``
    or FastAPI's ``TestClient``).
    """

    def __init__(self, http: httpx.Client | str, scenario: dict | None = None):
        self.http = httpx.Client(base_url=http) if isinstance(http, str) else http
        body = self._call("post", "/v1/session", json=scenario or {})
        self.session_id: str = body["session_id"]
        self.spec: dict = body["spec"]
        self.agent_ids = [a["agent_id"] for a in self.spec["agents"]]

    def _call(self, method: str, path: str, **kw) -> dict:
        resp = getattr(self.http, method)(path, **kw)
        if resp.status_code >= 400:
            raise RemoteError(resp.status_code, resp.json().get("detail"))
        return resp.json()

    def _obs(self, payload: dict) -> list[np.ndarray]:
        return [np.asarray(payload[i], dtype=np.float64) for i in self.agent_ids]

    def reset(self) -> list[np.ndarray]:
        return self._obs(self._call("post", f"/v1/session/{self.session_id}/reset")["observations"])

    def step(self, actions) -> tuple[list[np.ndarray], float, bool, list[dict]]:
        body = {"actions": {i: int(a) for i, a in zip(self.agent_ids, actions)}}
        out = self._call("post", f"/v1/session/{self.session_id}/step", json=body)
        return self._obs(out["observations"]), out["reward"], out["done"], out["events"]

    def state(self) -> dict:
        return self._call("get", f"/v1/session/{self.session_id}/state")

    def close(self) -> None:
        self._call("delete", f"/v1/session/{self.session_id}")
