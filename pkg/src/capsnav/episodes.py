"""Episode persistence: length-prefixed binary records with a JSON text
header per file, plus an append-only dataset store with a manifest.

Byte layouts are fixed little-endian so re-running any stage with the
same inputs produces byte-identical files.
"""

import hashlib
import json
import math
import os
import struct

import numpy as np

from capsnav import worldsim as ws

EPISODE_MAGIC = b"CAPSEP01"
LABELS_MAGIC = b"CAPSLB01"
STORE_FORMAT_VERSION = 1

CUE_KEYS = ["coll", "heading", "speed", "beacon_frac", "path_seen",
            "path_diff"]


def config_hash(obj):
    """Stable short hash of any JSON-serializable config object."""
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _encode_record(rec, w):
    parts = []
    if rec.action is not None:
        parts.append(struct.pack("<Bdd", 1, rec.action.steer,
                                 rec.action.speed_setpoint))
    else:
        parts.append(struct.pack("<Bdd", 0, 0.0, 0.0))
    s = rec.state
    parts.append(struct.pack("<ddddB", s.x, s.y, s.heading, s.speed,
                             1 if s.collided else 0))
    parts.append(np.ascontiguousarray(rec.obs.camera,
                                      dtype=np.float32).tobytes())
    o = rec.oracle
    parts.append(np.ascontiguousarray(o.classes, dtype=np.uint8).tobytes())
    parts.append(struct.pack("<Bddd", 1 if o.path_seen else 0, o.path_diff,
                             o.beacon_frac, o.signed_path_dist))
    payload = b"".join(parts)
    return struct.pack("<I", len(payload)) + payload


def _decode_record(payload, w):
    off = 0
    has_action, steer, sp = struct.unpack_from("<Bdd", payload, off)
    off += struct.calcsize("<Bdd")
    x, y, th, v, coll = struct.unpack_from("<ddddB", payload, off)
    off += struct.calcsize("<ddddB")
    cam = np.frombuffer(payload, dtype=np.float32, count=w * 2,
                        offset=off).reshape(w, 2).astype(np.float64)
    off += w * 2 * 4
    classes = np.frombuffer(payload, dtype=np.uint8, count=w,
                            offset=off).astype(np.int64)
    off += w
    seen, pdiff, bfrac, sdist = struct.unpack_from("<Bddd", payload, off)
    state = ws.CarState(x=x, y=y, heading=th, speed=v, collided=bool(coll))
    obs = ws.Observation(camera=cam, speed=v, heading_cos=math.cos(th),
                         heading_sin=math.sin(th), collided=bool(coll))
    oracle = ws.OracleFrame(classes=classes, path_seen=bool(seen),
                            path_diff=pdiff, beacon_frac=bfrac,
                            signed_path_dist=sdist)
    action = ws.Action(steer, sp) if has_action else None
    return ws.StepRecord(obs=obs, action=action, oracle=oracle, state=state)


def save_episode(path, log, cfg_hash=""):
    w = log.steps[0].obs.camera.shape[0]
    header = {
        "format_version": STORE_FORMAT_VERSION,
        "config_hash": cfg_hash,
        "policy_tag": log.policy_tag,
        "world_seed": log.world_seed,
        "camera_columns": w,
        "collided": log.collided,
        "valid": log.valid,
        "n_records": len(log.steps),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(EPISODE_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for rec in log.steps:
            f.write(_encode_record(rec, w))


def load_episode(path):
    with open(path, "rb") as f:
        if f.read(len(EPISODE_MAGIC)) != EPISODE_MAGIC:
            raise ValueError("not an episode file: %r" % path)
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n))
        w = header["camera_columns"]
        steps = []
        for _ in range(header["n_records"]):
            (plen,) = struct.unpack("<I", f.read(4))
            steps.append(_decode_record(f.read(plen), w))
    log = ws.EpisodeLog(steps=steps, collided=header["collided"],
                        valid=header["valid"],
                        policy_tag=header["policy_tag"],
                        world_seed=header["world_seed"])
    labels_path = path + ".labels"
    if os.path.exists(labels_path):
        log.cues = load_labels(labels_path)
    return log


def save_labels(path, cues):
    n = len(cues["coll"])
    header = {"format_version": STORE_FORMAT_VERSION, "n": n,
              "source": cues.get("source", "")}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(LABELS_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for k in CUE_KEYS:
            f.write(np.ascontiguousarray(cues[k], dtype=np.float64).tobytes())


def load_labels(path):
    with open(path, "rb") as f:
        if f.read(len(LABELS_MAGIC)) != LABELS_MAGIC:
            raise ValueError("not a labels file: %r" % path)
        hn = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(hn))
        n = header["n"]
        cues = {}
        for k in CUE_KEYS:
            count = n * (2 if k == "heading" else 1)
            arr = np.frombuffer(f.read(count * 8), dtype=np.float64).copy()
            cues[k] = arr.reshape(n, 2) if k == "heading" else arr
        cues["source"] = header.get("source", "")
    return cues


class DatasetStore:
    """Append-only directory of episode files plus a manifest.

    Every episode is tagged with the behavior policy and world seed that
    produced it; the manifest aggregates counts and provenance tags.
    """

    def __init__(self, root):
        self.root = root
        self.episode_dir = os.path.join(root, "episodes")
        self.manifest_path = os.path.join(root, "manifest.json")

    def _read_manifest(self):
        if os.path.exists(self.manifest_path):
            with open(self.manifest_path) as f:
                return json.load(f)
        return {
            "format_version": STORE_FORMAT_VERSION,
            "episode_count": 0,
            "step_count": 0,
            "label_status": "unlabeled",
            "config_hash": "",
            "task_tags": [],
            "world_seeds": [],
            "entries": [],
        }

    @property
    def manifest(self):
        return self._read_manifest()

    def append(self, logs, cfg_hash="", task_tag=""):
        """Write new episode files, then commit the manifest. Episodes are
        written first so an I/O failure leaves the manifest unchanged."""
        man = self._read_manifest()
        if man["config_hash"] and cfg_hash and man["config_hash"] != cfg_hash:
            raise ValueError("sim config hash differs from stored corpus")
        os.makedirs(self.episode_dir, exist_ok=True)
        start = man["episode_count"]
        for i, log in enumerate(logs):
            save_episode(os.path.join(self.episode_dir,
                                      "ep_%06d.bin" % (start + i)),
                         log, cfg_hash)
            man["entries"].append({
                "file": "ep_%06d.bin" % (start + i),
                "policy_tag": log.policy_tag,
                "world_seed": log.world_seed,
                "steps": log.n_actions,
                "collided": log.collided,
            })
            man["world_seeds"].append(log.world_seed)
        man["episode_count"] += len(logs)
        man["step_count"] += sum(log.n_actions for log in logs)
        man["config_hash"] = cfg_hash or man["config_hash"]
        if task_tag and task_tag not in man["task_tags"]:
            man["task_tags"].append(task_tag)
        tmp = self.manifest_path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(man, f, indent=2, sort_keys=True)
        os.replace(tmp, self.manifest_path)
        return man

    def set_label_status(self, status):
        man = self._read_manifest()
        man["label_status"] = status
        tmp = self.manifest_path + ".tmp"
        with open(tmp, "w") as f:
            json.dump(man, f, indent=2, sort_keys=True)
        os.replace(tmp, self.manifest_path)

    def load_logs(self):
        man = self._read_manifest()
        logs = []
        for e in man["entries"]:
            logs.append(load_episode(os.path.join(self.episode_dir,
                                                  e["file"])))
        if len(logs) != man["episode_count"]:
            raise ValueError("manifest count does not match files on disk")
        return logs

    def write_labels(self, logs, source):
        for e, log in zip(self.manifest["entries"], logs):
            if log.cues is None:
                raise ValueError("log missing cues")
            save_labels(os.path.join(self.episode_dir, e["file"] + ".labels"),
                        log.cues)
        self.set_label_status("labeled:%s" % source)
