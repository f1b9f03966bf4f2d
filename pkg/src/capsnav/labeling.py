"""Event-cue labeling for episode logs.

Collision, heading and speed are self-labeled straight from the logged
car state. The vision cues (beacon fraction, path visibility/offset) come
from a small per-column classifier trained on a tiny oracle-labeled subset
of frames, then run over the whole corpus.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from capsnav import worldsim as ws

DETECTOR_MAGIC = b"CAPSDET1"
LABEL_FILE_VERSION = 1


@dataclass
class LabeledFrame:
    frame_id: str
    camera: np.ndarray   # (W, 2)
    labels: np.ndarray   # (W,) class ids
    split: str = "train"  # train | holdout


@dataclass
class DetectorParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    context: int = 2
    meta: dict = field(default_factory=dict)

    @property
    def camera_columns(self):
        return None  # detector is column-wise; any W works


@dataclass(frozen=True)
class DetectorHyper:
    lr: float = 0.2
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 512
    hidden: int = 24
    context: int = 2
    seed: int = 0


def save_labeled_frames(path, frames):
    """One text record per frame: id then W class integers."""
    with open(path, "w") as f:
        f.write("# capsnav labeled frames v%d\n" % LABEL_FILE_VERSION)
        for fr in frames:
            f.write("%s %s %s\n" % (fr.frame_id, fr.split,
                                    " ".join(str(int(c)) for c in fr.labels)))


def load_labeled_frames(path):
    out = []
    with open(path) as f:
        for line in f:
            if line.startswith("#") or not line.strip():
                continue
            parts = line.split()
            out.append(LabeledFrame(frame_id=parts[0], camera=None,
                                    labels=np.array([int(c) for c in parts[2:]]),
                                    split=parts[1]))
    return out


def column_features(camera, context=2):
    """Per-column features: (intensity, depth) over a +-context window,
    edge-replicated. (W, 2) -> (W, 2 * (2 * context + 1))."""
    padded = np.pad(camera, ((context, context), (0, 0)), mode="edge")
    w = camera.shape[0]
    return np.concatenate([padded[i:i + w] for i in range(2 * context + 1)],
                          axis=1)


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def detector_logits(det, feats):
    h = np.tanh(feats @ det.W1 + det.b1)
    return h @ det.W2 + det.b2, h


def classify_columns(det, camera):
    """Per-column class predictions for one raster (W,) ."""
    feats = column_features(camera, det.context)
    logits, _ = detector_logits(det, feats)
    return np.argmax(logits, axis=-1)


def train_detector(frames, hyper=None):
    """Fit the per-column classifier by minibatch cross-entropy descent.

    Deterministic given hyper.seed. Returns (DetectorParams, report dict
    with holdout per-column accuracy).
    """
    hyper = hyper or DetectorHyper()
    train_frames = [f for f in frames if f.split == "train"]
    hold_frames = [f for f in frames if f.split == "holdout"]
    if not train_frames:
        raise ValueError("no training frames")
    Xtr = np.concatenate([column_features(f.camera, hyper.context)
                          for f in train_frames])
    ytr = np.concatenate([f.labels for f in train_frames]).astype(np.int64)
    if len(np.unique(ytr)) < 2:
        raise ValueError("degenerate training set: single class")
    rng = np.random.default_rng(hyper.seed)
    din = Xtr.shape[1]
    det = DetectorParams(
        W1=rng.normal(0.0, 1.0 / math.sqrt(din), (din, hyper.hidden)),
        b1=np.zeros(hyper.hidden),
        W2=rng.normal(0.0, 1.0 / math.sqrt(hyper.hidden),
                      (hyper.hidden, ws.N_CLASSES)),
        b2=np.zeros(ws.N_CLASSES),
        context=hyper.context,
        meta={"labeled_frames": len(train_frames), "seed": hyper.seed,
              "epochs": hyper.epochs},
    )
    vel = [np.zeros_like(det.W1), np.zeros_like(det.b1),
           np.zeros_like(det.W2), np.zeros_like(det.b2)]
    n = len(Xtr)
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, hyper.batch_size):
            idx = order[lo:lo + hyper.batch_size]
            xb, yb = Xtr[idx], ytr[idx]
            logits, h = detector_logits(det, xb)
            p = _softmax(logits)
            dlogits = p.copy()
            dlogits[np.arange(len(yb)), yb] -= 1.0
            dlogits /= len(yb)
            gW2 = h.T @ dlogits
            gb2 = dlogits.sum(axis=0)
            dh = dlogits @ det.W2.T * (1.0 - h * h)
            gW1 = xb.T @ dh
            gb1 = dh.sum(axis=0)
            for buf, param, g in zip(vel, (det.W1, det.b1, det.W2, det.b2),
                                     (gW1, gb1, gW2, gb2)):
                buf *= hyper.momentum
                buf -= hyper.lr * g
                param += buf
    report = {"labeled_frames": len(train_frames)}
    if hold_frames:
        correct, total = 0, 0
        for f in hold_frames:
            pred = classify_columns(det, f.camera)
            correct += int(np.sum(pred == f.labels))
            total += len(f.labels)
        report["holdout_accuracy"] = correct / total
    return det, report


def detect_cues(camera, det):
    """(beacon_frac, path_seen, path_diff) from a camera raster."""
    classes = classify_columns(det, camera)
    return ws.cues_from_classes(classes)


# ---------------------------------------------------------------------------
# corpus labeling


def self_label(log):
    """Self-supervised cues (coll, heading, speed) from the log alone."""
    if not log.valid:
        raise ValueError("cannot label an invalid episode log")
    n = len(log.steps)
    coll = np.zeros(n)
    if log.collided:
        coll[-1] = 1.0
    heading = np.array([[math.cos(r.state.heading), math.sin(r.state.heading)]
                        for r in log.steps])
    speed = np.array([r.state.speed for r in log.steps])
    return {"coll": coll, "heading": heading, "speed": speed}


def label_dataset(logs, det=None, source="detector"):
    """Attach a full EventCues record to every step of every log.

    source 'detector' uses the learned per-column classifier on the logged
    rasters; 'oracle' copies the simulator ground truth (reference /
    evaluation use). Raw records are never mutated; the cues are attached
    as a parallel structure. Idempotent.
    """
    if source == "detector" and det is None:
        raise ValueError("detector labeling requires detector params")
    for log in logs:
        cues = self_label(log)
        n = len(log.steps)
        beacon_frac = np.zeros(n)
        path_seen = np.zeros(n)
        path_diff = np.zeros(n)
        for i, rec in enumerate(log.steps):
            if source == "oracle":
                bf, seen, pd = (rec.oracle.beacon_frac, rec.oracle.path_seen,
                                rec.oracle.path_diff)
            else:
                if rec.obs.camera.shape[1] * (2 * det.context + 1) != \
                        det.W1.shape[0]:
                    raise ValueError("raster channels do not match detector")
                bf, seen, pd = detect_cues(rec.obs.camera, det)
            beacon_frac[i] = bf
            path_seen[i] = 1.0 if seen else 0.0
            path_diff[i] = pd
        cues.update({"beacon_frac": beacon_frac, "path_seen": path_seen,
                     "path_diff": path_diff, "source": source})
        log.cues = cues
    return logs


def select_labeled_frames(logs, fraction, seed=0, holdout_fraction=None):
    """Pick the oracle-labeled detector training subset, stratified so
    beacon-visible frames are represented, plus a disjoint holdout."""
    rng = np.random.default_rng(seed)
    frames = []
    for li, log in enumerate(logs):
        for si, rec in enumerate(log.steps):
            frames.append((li, si, rec))
    n_total = len(frames)
    n_label = max(int(math.ceil(fraction * n_total)), 4)
    beacon_idx = [i for i, (_, _, r) in enumerate(frames)
                  if r.oracle.beacon_frac > 0]
    other_idx = [i for i in range(n_total) if i not in set(beacon_idx)]
    n_beacon = min(n_label // 3, len(beacon_idx))
    chosen = list(rng.choice(beacon_idx, size=n_beacon, replace=False)
                  if n_beacon else [])
    rest = rng.choice(other_idx, size=n_label - n_beacon, replace=False)
    chosen = sorted(int(i) for i in list(chosen) + list(rest))
    chosen_set = set(chosen)
    if holdout_fraction is None:
        holdout_fraction = fraction
    pool = [i for i in range(n_total) if i not in chosen_set]
    n_hold = min(max(int(math.ceil(holdout_fraction * n_total)), 4), len(pool))
    hold = sorted(int(i) for i in rng.choice(pool, size=n_hold, replace=False))
    out = []
    for i in chosen:
        li, si, rec = frames[i]
        out.append(LabeledFrame("%d:%d" % (li, si), rec.obs.camera,
                                rec.oracle.classes.copy(), "train"))
    for i in hold:
        li, si, rec = frames[i]
        out.append(LabeledFrame("%d:%d" % (li, si), rec.obs.camera,
                                rec.oracle.classes.copy(), "holdout"))
    return out


# ---------------------------------------------------------------------------
# detector checkpoint io


def save_detector(path, det):
    keys = ["W1", "b1", "W2", "b2"]
    header = {
        "version": 1,
        "context": det.context,
        "meta": det.meta,
        "shapes": {k: list(getattr(det, k).shape) for k in keys},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(DETECTOR_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for k in keys:
            f.write(np.ascontiguousarray(getattr(det, k),
                                         dtype=np.float64).tobytes())


def load_detector(path):
    with open(path, "rb") as f:
        if f.read(len(DETECTOR_MAGIC)) != DETECTOR_MAGIC:
            raise ValueError("not a detector checkpoint: %r" % path)
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n))
        arrays = {}
        for k in ["W1", "b1", "W2", "b2"]:
            shape = tuple(header["shapes"][k])
            count = int(np.prod(shape)) if shape else 1
            arrays[k] = np.frombuffer(f.read(count * 8),
                                      dtype=np.float64).reshape(shape).copy()
    return DetectorParams(context=header["context"], meta=header["meta"],
                          **arrays)
