"""Live steering service: simulator + MPC loop behind an HTTP/JSON API.

One control thread per session owns the simulator and the planner; HTTP
handlers communicate with it through locked snapshots and an atomically
swapped reward spec. Streaming clients get one JSON message per MPC
step over a WebSocket.

Ground truth the planner cannot see is exposed only inside the
explicitly named debug_truth field, for birds-eye rendering.
"""

import json
import math
import queue
import secrets
import threading
import time

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from capsnav import capsnet
from capsnav import planner
from capsnav import worldsim as ws

STREAM_SCHEMA_VERSION = 1


def _pose_dict(state):
    return {"x": state.x, "y": state.y, "heading": state.heading,
            "speed": state.speed, "collided": state.collided}


def _world_dict(world):
    return {
        "kind": world.kind,
        "path": np.asarray(world.path).tolist(),
        "obstacles": np.asarray(world.obstacles).tolist(),
        "beacons": np.asarray(world.beacons).tolist(),
        "bounds": list(world.bounds),
    }


def _rollout_positions(state, actions, world, cfg):
    """Dead-reckoned poses for the planned sequence, for UI rendering
    only (the UI itself computes no physics)."""
    pts = [[state.x, state.y]]
    s = state
    for a in actions:
        s, _ = ws.step(s, ws.Action(float(a[0]), float(a[1])), world, cfg)
        pts.append([s.x, s.y])
    return pts


class Session:
    """Owns one sim + MPC loop on a dedicated control thread."""

    def __init__(self, sid, model, spec, world, cfg, seed=0,
                 step_period=0.25, speed_multiplier=1.0):
        self.sid = sid
        self.model = model
        self.world = world
        self.cfg = cfg
        self.seed = seed
        self.step_period = step_period
        self.speed_multiplier = max(speed_multiplier, 1e-6)
        self._lock = threading.Lock()
        self._spec = spec
        self._pending_spec = None
        self._paused = threading.Event()
        self._stop = threading.Event()
        self._reset_req = threading.Event()
        self._subscribers = []
        self.step_index = 0
        self._rng = np.random.default_rng(seed)
        self.state = self._spawn()
        self._carry = None
        self.snapshot = self._make_snapshot(None)
        self.thread = threading.Thread(target=self._run, daemon=True)

    def _spawn(self):
        return ws.spawn_pose(self.world, self.cfg, self._rng,
                             near_start=True)

    # ------------------------------------------------------------------
    # control thread

    def start(self):
        self.thread.start()

    def stop(self):
        self._stop.set()
        self.thread.join(timeout=5.0)

    def _run(self):
        obs_history = []
        while not self._stop.is_set():
            if self._reset_req.is_set():
                self._reset_req.clear()
                with self._lock:
                    self.state = self._spawn()
                    self.step_index = 0
                    self._carry = None
                obs_history = []
            if self._paused.is_set():
                time.sleep(0.01)
                continue
            t0 = time.monotonic()
            with self._lock:
                if self._pending_spec is not None:
                    self._spec = self._pending_spec
                    self._pending_spec = None
                spec = self._spec
                state = self.state
            obs_history.append(ws.observe(state, self.world, self.cfg))
            action, plan, self._carry = planner.mpc_step(
                self.model, obs_history, spec, planner.MPC_CEM,
                carry=self._carry,
                seed=int(self._rng.integers(0, 2 ** 63 - 1)))
            act = ws.Action(float(action[0]), float(action[1]))
            new_state, _ = ws.step(state, act, self.world, self.cfg)
            with self._lock:
                self.state = new_state
                self.step_index += 1
                snap = self._make_snapshot(plan, spec)
                self.snapshot = snap
                subs = list(self._subscribers)
            for q in subs:
                try:
                    q.put_nowait(snap)
                except queue.Full:
                    pass
            budget = self.step_period / self.speed_multiplier
            dt = time.monotonic() - t0
            if budget > dt:
                time.sleep(budget - dt)

    # ------------------------------------------------------------------
    # snapshots

    def _make_snapshot(self, plan, spec=None):
        spec = spec or self._spec
        msg = {
            "schema_version": STREAM_SCHEMA_VERSION,
            "session": self.sid,
            "step": self.step_index,
            "paused": self._paused.is_set(),
            "pose": _pose_dict(self.state),
            "spec_hash": spec.spec_hash(),
            "step_period": self.step_period,
            "plan": None,
            "debug_truth": {
                "world": _world_dict(self.world),
                "rollout": None,
            },
        }
        if plan is not None:
            msg["plan"] = {
                "actions": np.asarray(plan.actions).tolist(),
                "reward": float(plan.reward),
                "predicted": {k: np.asarray(v).tolist()
                              for k, v in plan.cues.items()},
            }
            msg["debug_truth"]["rollout"] = _rollout_positions(
                self.state, plan.actions, self.world, self.cfg)
        return msg

    def get_snapshot(self):
        with self._lock:
            return self.snapshot

    # ------------------------------------------------------------------
    # client operations

    def subscribe(self):
        q = queue.Queue(maxsize=64)
        with self._lock:
            self._subscribers.append(q)
        return q

    def unsubscribe(self, q):
        with self._lock:
            if q in self._subscribers:
                self._subscribers.remove(q)

    def apply_goal(self, cmd):
        """Validate and stage a spec update; applied atomically before
        the next MPC step. Returns the effective step index."""
        with self._lock:
            spec = self._spec if self._pending_spec is None \
                else self._pending_spec
            new = planner.RewardSpec.from_dict(spec.to_dict())
            changed = False
            if "goal_heading" in cmd and cmd["goal_heading"] is not None:
                g = float(cmd["goal_heading"])
                if not math.isfinite(g):
                    raise ValueError("goal_heading must be finite")
                new.targets["goal_heading"] = ws.wrap_angle(g)
                changed = True
            if "goal_speed" in cmd and cmd["goal_speed"] is not None:
                g = float(cmd["goal_speed"])
                if not 0.0 <= g <= self.cfg.v_max:
                    raise ValueError("goal_speed outside [0, v_max]")
                new.targets["goal_speed"] = g
                changed = True
            if cmd.get("weights"):
                terms = list(new.terms)
                for k, wgt in cmd["weights"].items():
                    i = int(k)
                    if not 0 <= i < len(terms):
                        raise ValueError("term index %d out of range" % i)
                    if not math.isfinite(float(wgt)):
                        raise ValueError("weight must be finite")
                    d = terms[i].to_dict()
                    d["weight"] = float(wgt)
                    terms[i] = planner.Term.from_dict(d)
                new.terms = terms
                changed = True
            if cmd.get("enabled"):
                terms = list(new.terms)
                for k, on in cmd["enabled"].items():
                    i = int(k)
                    if not 0 <= i < len(terms):
                        raise ValueError("term index %d out of range" % i)
                    d = terms[i].to_dict()
                    d["enabled"] = bool(on)
                    terms[i] = planner.Term.from_dict(d)
                new.terms = terms
                changed = True
            if not changed:
                return {"effective_step": self.step_index,
                        "spec_hash": spec.spec_hash()}
            new.bind(self.model.cue_names)
            self._pending_spec = new
            return {"effective_step": self.step_index + 1,
                    "spec_hash": new.spec_hash()}

    def pause(self):
        self._paused.set()

    def resume(self):
        self._paused.clear()

    def reset(self):
        self._reset_req.set()


def create_app(default_checkpoint=None, static_dir=None):
    app = FastAPI(title="capsnav steering service")
    sessions = {}

    def _get(sid):
        if sid not in sessions:
            raise HTTPException(status_code=404, detail="unknown session")
        return sessions[sid]

    @app.post("/session")
    def create_session(body: dict):
        ckpt = body.get("model", default_checkpoint)
        if not ckpt:
            raise HTTPException(status_code=400,
                                detail="no model checkpoint given")
        try:
            model = capsnet.CapsModel.load(ckpt)
        except Exception as exc:
            raise HTTPException(status_code=400,
                                detail="bad checkpoint: %s" % exc)
        spec_entry = body.get("spec", "forest")
        try:
            if isinstance(spec_entry, str):
                spec = planner.build_spec(spec_entry,
                                          targets=body.get("targets"))
            else:
                spec = planner.RewardSpec.from_dict(spec_entry)
            spec.bind(model.cue_names)
        except Exception as exc:
            raise HTTPException(status_code=400,
                                detail="bad reward spec: %s" % exc)
        wcfg = body.get("world", {})
        seed = int(body.get("seed", 0))
        try:
            world = ws.generate_world(wcfg.get("kind", "circle_path"),
                                      wcfg.get("params", {}),
                                      seed=wcfg.get("seed", seed))
            cfg = ws.SimConfig.from_dict(body["sim_config"]) \
                if "sim_config" in body else ws.SimConfig()
        except Exception as exc:
            raise HTTPException(status_code=400,
                                detail="bad world config: %s" % exc)
        sid = secrets.token_hex(8)
        sess = Session(sid, model, spec, world, cfg, seed=seed,
                       step_period=float(body.get("step_period", 0.25)),
                       speed_multiplier=float(
                           body.get("speed_multiplier", 1.0)))
        sessions[sid] = sess
        sess.start()
        return {"session": sid, "spec_hash": spec.spec_hash(),
                "horizon": model.cfg.horizon}

    @app.get("/session/{sid}/state")
    def get_state(sid: str):
        return _get(sid).get_snapshot()

    @app.post("/session/{sid}/goal")
    def post_goal(sid: str, body: dict):
        sess = _get(sid)
        try:
            return sess.apply_goal(body or {})
        except (ValueError, planner.SpecBindError) as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.post("/session/{sid}/pause")
    def post_pause(sid: str):
        _get(sid).pause()
        return {"paused": True}

    @app.post("/session/{sid}/resume")
    def post_resume(sid: str):
        _get(sid).resume()
        return {"paused": False}

    @app.post("/session/{sid}/reset")
    def post_reset(sid: str):
        _get(sid).reset()
        return {"reset": True}

    @app.delete("/session/{sid}")
    def delete_session(sid: str):
        sess = _get(sid)
        sess.stop()
        del sessions[sid]
        return {"stopped": True}

    @app.websocket("/session/{sid}/stream")
    async def stream(websocket: WebSocket, sid: str):
        if sid not in sessions:
            await websocket.close(code=4004)
            return
        sess = sessions[sid]
        await websocket.accept()
        q = sess.subscribe()
        import asyncio
        loop = asyncio.get_event_loop()
        try:
            while True:
                try:
                    snap = await loop.run_in_executor(
                        None, lambda: q.get(timeout=1.0))
                except queue.Empty:
                    if sess._stop.is_set():
                        break
                    continue
                await websocket.send_text(json.dumps(snap))
        except WebSocketDisconnect:
            pass
        finally:
            sess.unsubscribe(q)

    if static_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")

    app.state.sessions = sessions
    return app
