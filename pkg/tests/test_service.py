import time

import numpy as np
import pytest

pytest.importorskip("fastapi")
from starlette.testclient import TestClient

from capsnav import capsnet as cn
from capsnav import service


TINY_CFG = cn.ModelConfig(horizon=4, history_len=2, enc_width=8, hidden=8)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    p = tmp_path_factory.mktemp("svc") / "model.bin"
    cn.save_checkpoint(str(p), TINY_CFG, cn.init_params(TINY_CFG, seed=0))
    return str(p)


@pytest.fixture()
def client(checkpoint):
    app = service.create_app(default_checkpoint=checkpoint)
    with TestClient(app) as c:
        yield c
    for sess in list(app.state.sessions.values()):
        sess.stop()


def _make_session(client, **body):
    body.setdefault("step_period", 0.01)
    r = client.post("/session", json=body)
    assert r.status_code == 200, r.text
    return r.json()


def _wait_steps(client, sid, n, timeout=10.0):
    t0 = time.time()
    while time.time() - t0 < timeout:
        snap = client.get("/session/%s/state" % sid).json()
        if snap["step"] >= n:
            return snap
        time.sleep(0.02)
    raise AssertionError("session did not advance to step %d" % n)


def test_session_requires_checkpoint():
    app = service.create_app(default_checkpoint=None)
    with TestClient(app) as c:
        r = c.post("/session", json={})
        assert r.status_code == 400


def test_session_rejects_bad_inputs(client, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert client.post("/session",
                       json={"model": str(bad)}).status_code == 400
    assert client.post("/session",
                       json={"spec": "no_such_preset"}).status_code == 400
    assert client.post(
        "/session",
        json={"world": {"kind": "nope"}}).status_code == 400


def test_unknown_session_is_404(client):
    assert client.get("/session/deadbeef/state").status_code == 404
    assert client.post("/session/deadbeef/pause").status_code == 404


def test_state_snapshot_schema_and_progress(client):
    info = _make_session(client)
    sid = info["session"]
    assert info["horizon"] == TINY_CFG.horizon
    snap = _wait_steps(client, sid, 2)
    for k in ("schema_version", "session", "step", "paused", "pose",
              "spec_hash", "step_period", "plan", "debug_truth"):
        assert k in snap, k
    assert snap["spec_hash"] == info["spec_hash"]
    assert len(snap["plan"]["actions"]) == TINY_CFG.horizon
    assert len(snap["debug_truth"]["rollout"]) == TINY_CFG.horizon + 1
    world = snap["debug_truth"]["world"]
    assert world["kind"] == "circle_path" and len(world["path"]) > 2
    preds = snap["plan"]["predicted"]
    assert set(preds) == set(cn.CUE_NAMES)
    client.delete("/session/%s" % sid)


def test_goal_update_changes_spec_hash(client):
    info = _make_session(client)
    sid = info["session"]
    _wait_steps(client, sid, 1)
    r = client.post("/session/%s/goal" % sid,
                    json={"goal_heading": 1.2})
    assert r.status_code == 200
    ack = r.json()
    assert ack["spec_hash"] != info["spec_hash"]
    # the new hash shows up in the stream within one step period
    snap = _wait_steps(client, sid, ack["effective_step"] + 1)
    assert snap["spec_hash"] == ack["spec_hash"]
    client.delete("/session/%s" % sid)


def test_goal_validation(client):
    sid = _make_session(client)["session"]
    assert client.post("/session/%s/goal" % sid,
                       json={"goal_speed": 99.0}).status_code == 422
    r = client.post("/session/%s/goal" % sid,
                    content='{"goal_heading": NaN}',
                    headers={"content-type": "application/json"})
    assert r.status_code == 422
    assert client.post("/session/%s/goal" % sid,
                       json={"weights": {"14": 1.0}}).status_code == 422
    # empty command is a no-op acknowledgment, not an error
    r = client.post("/session/%s/goal" % sid, json={})
    assert r.status_code == 200
    client.delete("/session/%s" % sid)


def test_term_weight_and_enable_updates(client):
    sid = _make_session(client, spec="indoor_analogue")["session"]
    r1 = client.post("/session/%s/goal" % sid,
                     json={"weights": {"0": 2.0}})
    r2 = client.post("/session/%s/goal" % sid,
                     json={"enabled": {"1": False}})
    assert r1.status_code == 200 and r2.status_code == 200
    assert r1.json()["spec_hash"] != r2.json()["spec_hash"]
    client.delete("/session/%s" % sid)


def test_pause_resume_reset(client):
    sid = _make_session(client)["session"]
    _wait_steps(client, sid, 2)
    assert client.post("/session/%s/pause" % sid).json() == {"paused": True}
    time.sleep(0.1)
    s1 = client.get("/session/%s/state" % sid).json()
    time.sleep(0.15)
    s2 = client.get("/session/%s/state" % sid).json()
    assert s2["step"] == s1["step"]
    client.post("/session/%s/resume" % sid)
    _wait_steps(client, sid, s2["step"] + 1)
    client.post("/session/%s/reset" % sid)
    t0 = time.time()
    while time.time() - t0 < 5.0:
        if client.get("/session/%s/state" % sid).json()["step"] \
                < s2["step"]:
            break
        time.sleep(0.02)
    else:
        raise AssertionError("reset did not rewind the step counter")
    client.delete("/session/%s" % sid)


def test_websocket_stream_messages(client):
    sid = _make_session(client)["session"]
    with client.websocket_connect("/session/%s/stream" % sid) as sock:
        msgs = [sock.receive_json() for _ in range(3)]
    steps = [m["step"] for m in msgs]
    assert steps == sorted(steps) and len(set(steps)) == 3
    for m in msgs:
        assert m["schema_version"] == service.STREAM_SCHEMA_VERSION
        assert len(m["plan"]["actions"]) == TINY_CFG.horizon
    client.delete("/session/%s" % sid)


def test_delete_stops_session(client):
    sid = _make_session(client)["session"]
    assert client.delete("/session/%s" % sid).json() == {"stopped": True}
    assert client.get("/session/%s/state" % sid).status_code == 404
