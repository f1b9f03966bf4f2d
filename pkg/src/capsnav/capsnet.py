"""Action-conditioned event-cue predictor.

Dense encoder over a stacked scanline-observation history feeds the
initial hidden state of a single-gate recurrent cell that consumes one
planned action per step; small per-cue heads read the hidden state at
every step. Gradients are hand-derived reverse-mode and checked against
finite differences in the test suite.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_MAGIC = b"CAPSNET1"

# name, output dim, head transform, loss kind
CUE_SPECS = [
    ("coll", 1, "sigmoid", "bce"),
    ("heading", 2, "unit2", "mse"),
    ("speed", 1, "identity", "mse"),
    ("beacon_frac", 1, "sigmoid", "mse"),
    ("path_seen", 1, "sigmoid", "bce"),
    ("path_diff", 1, "tanh", "mse"),
]
CUE_NAMES = [c[0] for c in CUE_SPECS]
N_CUES = len(CUE_SPECS)


class GradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    horizon: int = 12
    history_len: int = 4
    camera_columns: int = 64
    enc_width: int = 128
    hidden: int = 64
    action_dim: int = 2
    v_max: float = 2.0
    steer_max: float = 0.6
    cue_weights: tuple = tuple((n, 1.0) for n in CUE_NAMES)
    # optional extra multiplier on the positive class of the collision
    # BCE (collision steps are <1% of short-horizon windows); left at
    # 1.0 because raising it trades planner quality for recall
    coll_pos_weight: float = 1.0

    @property
    def frame_dim(self):
        # camera (W, 2) + speed, cos, sin, collided, valid
        return 2 * self.camera_columns + 5

    @property
    def input_dim(self):
        return self.history_len * self.frame_dim

    def weight(self, cue):
        return dict(self.cue_weights)[cue]

    def to_dict(self):
        d = {k: getattr(self, k) for k in (
            "horizon", "history_len", "camera_columns", "enc_width",
            "hidden", "action_dim", "v_max", "steer_max",
            "coll_pos_weight")}
        d["cue_weights"] = dict(self.cue_weights)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["cue_weights"] = tuple(sorted(d["cue_weights"].items()))
        return cls(**d)


def init_params(cfg, seed=0):
    rng = np.random.default_rng(seed)

    def dense(fan_in, fan_out):
        return rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out))

    e, hd, ad = cfg.enc_width, cfg.hidden, cfg.action_dim
    p = {
        "enc_W1": dense(cfg.input_dim, e), "enc_b1": np.zeros(e),
        "enc_W2": dense(e, e), "enc_b2": np.zeros(e),
        "enc_Wh": dense(e, hd), "enc_bh": np.zeros(hd),
        "cell_Wu": dense(ad, hd), "cell_Uu": dense(hd, hd),
        "cell_bu": np.zeros(hd),
        "cell_Wc": dense(ad, hd), "cell_Uc": dense(hd, hd),
        "cell_bc": np.zeros(hd),
    }
    for name, dim, _, _ in CUE_SPECS:
        p["head_%s_W" % name] = dense(hd, dim)
        p["head_%s_b" % name] = np.zeros(dim)
    return p


def n_params(params):
    return int(sum(v.size for v in params.values()))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def normalize_actions(cfg, actions):
    """(…, 2) physical (steer, speed_setpoint) -> normalized net inputs."""
    a = np.asarray(actions, dtype=np.float64)
    out = np.empty_like(a)
    out[..., 0] = a[..., 0] / cfg.steer_max
    out[..., 1] = a[..., 1] / cfg.v_max
    return out


def featurize_history(obs_list, cfg):
    """Stack the last K observations into one flat input vector.

    Missing slots at episode start are zero-padded with validity 0.
    """
    k = cfg.history_len
    frames = []
    recent = list(obs_list)[-k:]
    n_pad = k - len(recent)
    fd = cfg.frame_dim
    for _ in range(n_pad):
        frames.append(np.zeros(fd))
    for obs in recent:
        frames.append(np.concatenate([
            obs.camera.ravel(),
            [obs.speed / cfg.v_max, obs.heading_cos, obs.heading_sin,
             1.0 if obs.collided else 0.0, 1.0],
        ]))
    return np.concatenate(frames)


# ---------------------------------------------------------------------------
# forward / loss / gradients


def _encode(params, X):
    z1 = np.tanh(X @ params["enc_W1"] + params["enc_b1"])
    z2 = np.tanh(z1 @ params["enc_W2"] + params["enc_b2"])
    h0 = np.tanh(z2 @ params["enc_Wh"] + params["enc_bh"])
    return z1, z2, h0


def _unroll(params, h0, A):
    """Run the recurrent cell over normalized actions A (B, H, ad)."""
    b, hor, _ = A.shape
    h = h0
    cache = []
    hs = np.empty((b, hor, h0.shape[1]))
    for t in range(hor):
        a = A[:, t]
        u = _sigmoid(a @ params["cell_Wu"] + h @ params["cell_Uu"]
                     + params["cell_bu"])
        c = np.tanh(a @ params["cell_Wc"] + h @ params["cell_Uc"]
                    + params["cell_bc"])
        h_new = (1.0 - u) * h + u * c
        cache.append((a, h, u, c))
        hs[:, t] = h_new
        h = h_new
    return hs, cache


def _heads(params, hs):
    """Apply every cue head to the hidden states (B, H, hd)."""
    outs = {}
    raws = {}
    for name, dim, tf, _ in CUE_SPECS:
        raw = hs @ params["head_%s_W" % name] + params["head_%s_b" % name]
        raws[name] = raw
        if tf == "sigmoid":
            outs[name] = _sigmoid(raw)
        elif tf == "tanh":
            outs[name] = np.tanh(raw)
        elif tf == "identity":
            outs[name] = raw
        elif tf == "unit2":
            norm = np.sqrt(np.sum(raw * raw, axis=-1, keepdims=True) + 1e-12)
            outs[name] = raw / norm
    return outs, raws


def forward_batch(params, cfg, X, A_norm):
    """Predict cue trajectories. X (B, Din), A_norm (B, H, ad) normalized.

    Returns dict cue -> (B, H, dim). Pure and deterministic.
    """
    X = np.atleast_2d(X)
    if A_norm.shape[1] != cfg.horizon:
        raise ValueError("action horizon %d != model horizon %d"
                         % (A_norm.shape[1], cfg.horizon))
    if X.shape[1] != cfg.input_dim:
        raise ValueError("obs feature dim mismatch")
    _, _, h0 = _encode(params, X)
    hs, _ = _unroll(params, h0, A_norm)
    outs, _ = _heads(params, hs)
    return outs


def forward(params, cfg, obs_history, actions):
    """Single-sample forward: obs list + (H, 2) physical actions."""
    x = featurize_history(obs_history, cfg)
    a = normalize_actions(cfg, np.asarray(actions))[None]
    outs = forward_batch(params, cfg, x[None], a)
    return {k: v[0] for k, v in outs.items()}


def forward_candidates(params, cfg, x, A_phys):
    """Shared-observation batch forward for the planner: encode once,
    unroll B candidate action sequences."""
    _, _, h0 = _encode(params, x[None])
    A = normalize_actions(cfg, A_phys)
    hs, _ = _unroll(params, np.repeat(h0, A.shape[0], axis=0), A)
    outs, _ = _heads(params, hs)
    return outs


_EPS = 1e-7


def _cue_losses(cfg, outs, labels, mask):
    """Per-cue masked loss arrays (B, H) plus the unmasked entry count."""
    per_cue = {}
    for i, (name, dim, _, kind) in enumerate(CUE_SPECS):
        y = labels[name]
        out = outs[name]
        m = mask[:, :, i].astype(np.float64)
        if kind == "bce":
            pw = cfg.coll_pos_weight if name == "coll" else 1.0
            p = np.clip(out[..., 0], _EPS, 1.0 - _EPS)
            l = -(pw * y * np.log(p) + (1.0 - y) * np.log(1.0 - p))
        else:
            if dim == 1:
                l = (out[..., 0] - y) ** 2
            else:
                l = np.sum((out - y) ** 2, axis=-1)
        per_cue[name] = cfg.weight(name) * l * m
    return per_cue


def loss_batch(params, cfg, X, A_norm, labels, mask):
    """Masked training loss (Eq-style sum over steps and cues, normalized
    by the number of unmasked (step, cue) entries)."""
    n_unmask = int(mask.sum())
    if n_unmask == 0:
        raise ValueError("fully masked batch")
    outs = forward_batch(params, cfg, X, A_norm)
    per_cue = _cue_losses(cfg, outs, labels, mask)
    total = sum(float(l.sum()) for l in per_cue.values()) / n_unmask
    breakdown = {k: float(v.sum()) / n_unmask for k, v in per_cue.items()}
    return total, breakdown


def loss_and_grads(params, cfg, X, A_norm, labels, mask):
    """Loss plus exact reverse-mode gradients for every parameter."""
    n_unmask = int(mask.sum())
    if n_unmask == 0:
        raise ValueError("fully masked batch")
    X = np.atleast_2d(X)
    z1, z2, h0 = _encode(params, X)
    hs, cache = _unroll(params, h0, A_norm)
    outs, raws = _heads(params, hs)

    per_cue = _cue_losses(cfg, outs, labels, mask)
    total = sum(float(l.sum()) for l in per_cue.values()) / n_unmask

    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dhs = np.zeros_like(hs)
    for i, (name, dim, tf, kind) in enumerate(CUE_SPECS):
        w = cfg.weight(name)
        y = labels[name]
        out = outs[name]
        scale = (w / n_unmask) * mask[:, :, i].astype(np.float64)
        if kind == "bce":
            # d/draw of BCE(sigmoid(raw)) = p - y; with a positive-class
            # weight pw it becomes p*(1 + (pw-1)*y) - pw*y
            pw = cfg.coll_pos_weight if name == "coll" else 1.0
            p = out[..., 0]
            draw = ((p * (1.0 + (pw - 1.0) * y) - pw * y) * scale)[..., None]
        elif tf == "sigmoid":
            dout = 2.0 * (out[..., 0] - y) * scale
            draw = (dout * out[..., 0] * (1.0 - out[..., 0]))[..., None]
        elif tf == "tanh":
            dout = 2.0 * (out[..., 0] - y) * scale
            draw = (dout * (1.0 - out[..., 0] ** 2))[..., None]
        elif tf == "identity":
            draw = (2.0 * (out[..., 0] - y) * scale)[..., None]
        elif tf == "unit2":
            raw = raws[name]
            norm = np.sqrt(np.sum(raw * raw, axis=-1, keepdims=True) + 1e-12)
            dout = 2.0 * (out - y) * scale[..., None]
            draw = (dout - out * np.sum(out * dout, axis=-1, keepdims=True)) / norm
        wk, bk = "head_%s_W" % name, "head_%s_b" % name
        grads[wk] += np.einsum("bth,btd->hd", hs, draw)
        grads[bk] += draw.sum(axis=(0, 1))
        dhs += draw @ params[wk].T

    # BPTT through the gated cell
    dh = np.zeros_like(h0)
    for t in reversed(range(A_norm.shape[1])):
        dh = dh + dhs[:, t]
        a, h_prev, u, c = cache[t]
        du_pre = dh * (c - h_prev) * u * (1.0 - u)
        dc_pre = dh * u * (1.0 - c * c)
        grads["cell_Wu"] += a.T @ du_pre
        grads["cell_Uu"] += h_prev.T @ du_pre
        grads["cell_bu"] += du_pre.sum(axis=0)
        grads["cell_Wc"] += a.T @ dc_pre
        grads["cell_Uc"] += h_prev.T @ dc_pre
        grads["cell_bc"] += dc_pre.sum(axis=0)
        dh = (dh * (1.0 - u) + du_pre @ params["cell_Uu"].T
              + dc_pre @ params["cell_Uc"].T)

    # encoder backward
    dpre_h = dh * (1.0 - h0 ** 2)
    grads["enc_Wh"] += z2.T @ dpre_h
    grads["enc_bh"] += dpre_h.sum(axis=0)
    dz2 = dpre_h @ params["enc_Wh"].T
    dpre2 = dz2 * (1.0 - z2 ** 2)
    grads["enc_W2"] += z1.T @ dpre2
    grads["enc_b2"] += dpre2.sum(axis=0)
    dz1 = dpre2 @ params["enc_W2"].T
    dpre1 = dz1 * (1.0 - z1 ** 2)
    grads["enc_W1"] += X.T @ dpre1
    grads["enc_b1"] += dpre1.sum(axis=0)

    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise GradientError("non-finite gradient in %s" % k)
    return total, grads


# ---------------------------------------------------------------------------
# samples


@dataclass
class SampleSet:
    """Compiled training tensors: inputs X (N, Din), normalized actions
    A (N, H, ad), labels per cue, mask (N, H, I)."""

    X: np.ndarray
    A: np.ndarray
    labels: dict
    mask: np.ndarray

    def __len__(self):
        return len(self.X)

    def subset(self, idx):
        return SampleSet(self.X[idx], self.A[idx],
                         {k: v[idx] for k, v in self.labels.items()},
                         self.mask[idx])

    @classmethod
    def concat(cls, sets):
        sets = [s for s in sets if len(s)]
        if not sets:
            raise ValueError("no samples")
        return cls(
            np.concatenate([s.X for s in sets]),
            np.concatenate([s.A for s in sets]),
            {k: np.concatenate([s.labels[k] for s in sets])
             for k in sets[0].labels},
            np.concatenate([s.mask for s in sets]),
        )


def _empty_labels(n, hor):
    return {
        "coll": np.zeros((n, hor)),
        "heading": np.zeros((n, hor, 2)),
        "speed": np.zeros((n, hor)),
        "beacon_frac": np.zeros((n, hor)),
        "path_seen": np.zeros((n, hor)),
        "path_diff": np.zeros((n, hor)),
    }


def make_samples(log, cfg):
    """Sliding-window samples from one labeled episode log.

    Labels at window offset h are the cues of the state reached after
    executing actions t..t+h. Windows crossing episode end are truncated
    and masked; after a collision the collision cue stays 1 (absorbing)
    and every other cue is masked.
    """
    if log.cues is None:
        raise ValueError("log is not labeled")
    k, hor = cfg.history_len, cfg.horizon
    t_actions = log.n_actions
    cues = log.cues
    n = max(t_actions - (k - 1), 0)
    X = np.zeros((n, cfg.input_dim))
    A = np.zeros((n, hor, cfg.action_dim))
    labels = _empty_labels(n, hor)
    mask = np.zeros((n, hor, N_CUES), dtype=bool)
    ci = {name: i for i, name in enumerate(CUE_NAMES)}
    obs_all = [rec.obs for rec in log.steps]
    for j, t in enumerate(range(k - 1, t_actions)):
        X[j] = featurize_history(obs_all[:t + 1], cfg)
        for h in range(hor):
            ta = t + h
            if ta < t_actions:
                act = log.steps[ta].action
                A[j, h] = normalize_actions(
                    cfg, np.array([act.steer, act.speed_setpoint]))
            idx = ta + 1
            if idx <= t_actions:
                labels["coll"][j, h] = cues["coll"][idx]
                labels["heading"][j, h] = cues["heading"][idx]
                labels["speed"][j, h] = cues["speed"][idx]
                labels["beacon_frac"][j, h] = cues["beacon_frac"][idx]
                labels["path_seen"][j, h] = cues["path_seen"][idx]
                labels["path_diff"][j, h] = cues["path_diff"][idx]
                mask[j, h, :] = True
                mask[j, h, ci["path_diff"]] = bool(cues["path_seen"][idx])
            elif log.collided:
                labels["coll"][j, h] = 1.0
                mask[j, h, ci["coll"]] = True
    return SampleSet(X, A, labels, mask)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 256
    seed: int = 0
    holdout_frac: float = 0.1


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # dicts, one per epoch
    seed: int = 0
    hyper: dict = field(default_factory=dict)
    final_holdout: dict = field(default_factory=dict)

    def to_text(self):
        lines = ["# seed=%d hyper=%s" % (self.seed, json.dumps(self.hyper))]
        for e in self.epochs:
            per_cue = " ".join("%s=%.6f" % (k, v)
                               for k, v in sorted(e["per_cue"].items()))
            lines.append("epoch=%d train_loss=%.8f holdout_loss=%.8f %s"
                         % (e["epoch"], e["train_loss"], e["holdout_loss"],
                            per_cue))
        lines.append("# final_holdout=%s" % json.dumps(self.final_holdout))
        return "\n".join(lines) + "\n"


def _eval_loss(params, cfg, samples, batch_size=1024):
    total, n = 0.0, 0
    acc = {name: 0.0 for name in CUE_NAMES}
    for lo in range(0, len(samples), batch_size):
        sub = samples.subset(slice(lo, lo + batch_size))
        m = int(sub.mask.sum())
        if m == 0:
            continue
        l, per = loss_batch(params, cfg, sub.X, sub.A, sub.labels, sub.mask)
        total += l * m
        for k, v in per.items():
            acc[k] += v * m
        n += m
    return total / max(n, 1), {k: v / max(n, 1) for k, v in acc.items()}


def train(samples, cfg, hyper=None):
    """Minibatch SGD with momentum; deterministic given hyper.seed.

    Returns (best-holdout params, TrainReport).
    """
    hyper = hyper or TrainHyper()
    rng = np.random.default_rng(hyper.seed)
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 samples")
    perm = rng.permutation(n)
    n_hold = max(int(n * hyper.holdout_frac), 1)
    hold = samples.subset(perm[:n_hold])
    tr = samples.subset(perm[n_hold:])

    params = init_params(cfg, seed=hyper.seed)
    vel = {k: np.zeros_like(v) for k, v in params.items()}
    report = TrainReport(seed=hyper.seed, hyper=vars(hyper).copy()
                         if not isinstance(hyper, TrainHyper)
                         else hyper.__dict__.copy())
    best = {k: v.copy() for k, v in params.items()}
    best_hold = math.inf
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(tr))
        ep_loss, ep_n = 0.0, 0
        ep_cue = {name: 0.0 for name in CUE_NAMES}
        for lo in range(0, len(tr), hyper.batch_size):
            sub = tr.subset(order[lo:lo + hyper.batch_size])
            if int(sub.mask.sum()) == 0:
                continue
            l, grads = loss_and_grads(params, cfg, sub.X, sub.A,
                                      sub.labels, sub.mask)
            if not math.isfinite(l):
                raise GradientError(
                    "training diverged at epoch %d; last report: %s"
                    % (epoch, report.epochs[-1] if report.epochs else None))
            for k in params:
                vel[k] = hyper.momentum * vel[k] - hyper.lr * grads[k]
                params[k] += vel[k]
            m = int(sub.mask.sum())
            ep_loss += l * m
            ep_n += m
        hold_loss, hold_cue = _eval_loss(params, cfg, hold)
        report.epochs.append({
            "epoch": epoch,
            "train_loss": ep_loss / max(ep_n, 1),
            "holdout_loss": hold_loss,
            "per_cue": hold_cue,
        })
        if hold_loss < best_hold:
            best_hold = hold_loss
            best = {k: v.copy() for k, v in params.items()}
    report.final_holdout = {"loss": best_hold}
    return best, report


# ---------------------------------------------------------------------------
# checkpoint io


def save_checkpoint(path, cfg, params):
    keys = sorted(params.keys())
    header = {
        "version": 1,
        "config": cfg.to_dict(),
        "dtype": "float64",
        "shapes": {k: list(params[k].shape) for k in keys},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(blob).to_bytes(8, "little"))
        f.write(blob)
        for k in keys:
            f.write(np.ascontiguousarray(params[k], dtype=np.float64).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a capsnet checkpoint: %r" % path)
        n = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(n))
        cfg = ModelConfig.from_dict(header["config"])
        params = {}
        for k in sorted(header["shapes"].keys()):
            shape = tuple(header["shapes"][k])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(count * 8)
            params[k] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return cfg, params


class CapsModel:
    """Convenience bundle of (config, params) with the public surface the
    planner and service use."""

    def __init__(self, cfg, params):
        self.cfg = cfg
        self.params = params

    @classmethod
    def load(cls, path):
        return cls(*load_checkpoint(path))

    def save(self, path):
        save_checkpoint(path, self.cfg, self.params)

    @property
    def cue_names(self):
        return list(CUE_NAMES)

    def forward(self, obs_history, actions):
        return forward(self.params, self.cfg, obs_history, actions)

    def forward_candidates(self, obs_history, A_phys):
        x = featurize_history(obs_history, self.cfg)
        return forward_candidates(self.params, self.cfg, x, A_phys)
