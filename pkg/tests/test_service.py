import json
import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from conftest import SCENARIOS
from rescuesim.client import RemoteEnv, RemoteError
from rescuesim.config import ScenarioConfig, load_scenario
from rescuesim.env import RescueEnv
from rescuesim.service import create_app


@pytest.fixture
def client(small_scenario):
    return TestClient(create_app(small_scenario))


def scripted_actions(env, steps, seed=0):
    rng = np.random.default_rng(seed)
    return [[int(rng.integers(a.action_count)) for a in env.agents] for _ in range(steps)]


def protocol_mismatches(scenario, steps=50, seed=0):
    """Drive the in-process env and an HTTP session with the same script and
    count elementwise differences in (observations, reward, done)."""
    env = RescueEnv(scenario)
    http = TestClient(create_app(scenario))
    remote = RemoteEnv(http, scenario.dump())
    seeds = scenario.seeds
    resets = 1
    local_obs = env.reset(seeds[0])
    mismatches = 0
    # session creation already reset with the first seed; compare that state
    created = http.get(f"/v1/session/{remote.session_id}/state").json()
    mismatches += created["tick"] != 0
    for acts in scripted_actions(env, steps, seed):
        if env.done:
            local_obs = env.reset(seeds[resets % len(seeds)])
            resets += 1
            remote_obs = remote.reset()
            mismatches += sum(not np.array_equal(a, b) for a, b in zip(local_obs, remote_obs))
            continue
        res = env.step(acts)
        obs, reward, done, _ = remote.step(acts)
        mismatches += sum(not np.array_equal(a, b) for a, b in zip(res.observations, obs))
        mismatches += (reward != res.reward) + (done != res.done)
    return mismatches


def test_protocol_equivalence(small_scenario):
    assert protocol_mismatches(small_scenario) == 0
    # a short horizon forces resets inside the script
    sc = ScenarioConfig.model_validate({**small_scenario.dump(), "max_steps": 7})
    assert protocol_mismatches(sc, 60, seed=2) == 0


def test_paper_scenario_spec():
    sc = load_scenario(SCENARIOS / "paper.json")
    http = TestClient(create_app())
    r = http.post("/v1/session", json=sc.dump())
    assert r.status_code == 200
    kinds = [a["kind"] for a in r.json()["spec"]["agents"]]
    assert kinds.count("FireEngine") == 2 and kinds.count("TrafficLight") == 16


def test_empty_body_uses_default_scenario(client, small_scenario):
    r = client.post("/v1/session")
    assert r.status_code == 200
    assert len(r.json()["spec"]["agents"]) == len(RescueEnv(small_scenario).agents)


def test_invalid_scenario_is_400(client, small_scenario):
    bad = small_scenario.dump()
    bad["noise"] = [{"from": 4, "to": 5, "count": 9}]
    r = client.post("/v1/session", json=bad)
    assert r.status_code == 400 and "capacity" in r.json()["detail"]
    assert client.post("/v1/session", json={"fire_target": 1}).status_code == 400


def test_session_limit(small_scenario):
    http = TestClient(create_app(small_scenario, max_sessions=1))
    assert http.post("/v1/session").status_code == 200
    assert http.post("/v1/session").status_code == 409


def test_unknown_session_is_404(client):
    assert client.post("/v1/session/nope/reset").status_code == 404
    assert client.post("/v1/session/nope/step", json={"actions": {}}).status_code == 404
    assert client.get("/v1/session/nope/state").status_code == 404
    assert client.delete("/v1/session/nope").status_code == 404


def test_malformed_actions_are_422(client):
    created = client.post("/v1/session").json()
    sid = created["session_id"]
    before = client.get(f"/v1/session/{sid}/state").json()
    ids = [a["agent_id"] for a in created["spec"]["agents"]]
    full = {i: 1 for i in ids}
    partial = dict(full)
    del partial["engine_1"]
    r = client.post(f"/v1/session/{sid}/step", json={"actions": partial})
    assert r.status_code == 422 and r.json()["detail"]["missing"] == ["engine_1"]
    r = client.post(f"/v1/session/{sid}/step", json={"actions": {**full, "ghost": 0}})
    assert r.status_code == 422 and r.json()["detail"]["unknown"] == ["ghost"]
    r = client.post(f"/v1/session/{sid}/step", json={"actions": {**full, "light_5": 7}})
    assert r.status_code == 422
    r = client.post(f"/v1/session/{sid}/step", json={"actions": full, "extra": 1})
    assert r.status_code == 422
    r = client.post(f"/v1/session/{sid}/step", json={"actions": {**full, "light_5": "x"}})
    assert r.status_code == 422
    # none of the rejected requests touched the world
    assert client.get(f"/v1/session/{sid}/state").json() == before


def test_step_after_done_is_409(one_cell_scenario):
    http = TestClient(create_app(one_cell_scenario))
    remote = RemoteEnv(http)
    _, reward, done, events = remote.step([0])
    assert done and reward == pytest.approx(100.9)
    assert {"type": "arrival", "vehicles": [0]} in events
    with pytest.raises(RemoteError) as err:
        remote.step([0])
    assert err.value.status == 409
    assert remote.state()["status"] == "done"
    remote.reset()
    assert remote.state()["tick"] == 0 and remote.state()["status"] == "running"


def test_reset_cycles_seed_list(small_scenario):
    sc = ScenarioConfig.model_validate({**small_scenario.dump(), "seeds": [7, 7]})
    http = TestClient(create_app(sc))
    sid = http.post("/v1/session").json()["session_id"]
    a = http.post(f"/v1/session/{sid}/reset").content
    b = http.post(f"/v1/session/{sid}/reset").content
    assert a == b


def test_state_matches_in_process_trace(small_scenario):
    env = RescueEnv(small_scenario)
    http = TestClient(create_app(small_scenario))
    remote = RemoteEnv(http)
    env.reset(small_scenario.seeds[0])
    assert remote.state()["tick"] == 0
    for acts in scripted_actions(env, 5):
        res = env.step(acts)
        remote.step(acts)
    want = env.trace_record(res.events)
    got = remote.state()
    assert got["tick"] == 5
    for key in ("vehicles", "lights", "events", "tick"):
        assert got[key] == json.loads(json.dumps(want[key]))


def test_interleaved_sessions_do_not_interfere(small_scenario):
    env = RescueEnv(small_scenario)
    script = scripted_actions(env, 30, seed=3)

    def solo():
        r = RemoteEnv(TestClient(create_app(small_scenario)))
        return [r.step(a)[:3] for a in script[:20]]

    expected = solo()
    http = TestClient(create_app(small_scenario))
    a, b = RemoteEnv(http), RemoteEnv(http)
    got_a, got_b = [], []
    for acts in script[:20]:
        got_a.append(a.step(acts)[:3])
        got_b.append(b.step(acts)[:3])
    def flat(rows):
        return [([o.tolist() for o in obs], r, d) for obs, r, d in rows]

    assert flat(got_a) == flat(expected) and flat(got_b) == flat(expected)

def test_concurrent_steps_are_serialized(small_scenario):
    http = TestClient(create_app(small_scenario))
    remote = RemoteEnv(http)
    ids = remote.agent_ids
    body = {"actions": {i: 1 for i in ids}}
    codes = []

    def worker():
        for _ in range(5):
            codes.append(http.post(f"/v1/session/{remote.session_id}/step", json=body).status_code)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert codes.count(200) == 20
    assert remote.state()["tick"] == 20


def test_delete_session(client):
    sid = client.post("/v1/session").json()["session_id"]
    assert client.delete(f"/v1/session/{sid}").status_code == 200
    assert client.get(f"/v1/session/{sid}/state").status_code == 404
