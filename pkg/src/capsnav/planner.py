"""Test-time control: a composable reward language over predicted cue
trajectories, a cross-entropy-method optimizer over action sequences, and
the MPC wrapper that executes only the first planned action.

Rewards are weighted sums of per-step terms; penalties (AbsDiff,
ActionPenalty) contribute negatively by construction, so preset weights
are the positive magnitudes.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

SPEC_FORMAT_VERSION = 1


class SpecBindError(ValueError):
    pass


@dataclass(frozen=True)
class Term:
    """One reward term.

    kind: affine | absdiff | cosdiff | gate | product | action_penalty | const
      affine:  a * cue + b, per step
      absdiff: -scale * |cue - target|  (wrapped difference for heading;
               scale divided by the target when normalize_by_target)
      cosdiff: cos(cue_angle - target) - 1
      gate:    g * (sum of inner terms per step), g = cue or 1 - cue
      product: g * (a * f(cue) + b), f = |.| when abs_inner
      action_penalty: -sum_d dim_weights[d] * action[d]^2
      const:   value per step
    """

    kind: str
    weight: float = 1.0
    cue: str = ""
    a: float = 1.0
    b: float = 0.0
    target: str = ""      # name in RewardSpec.targets
    scale: float = 1.0
    normalize_by_target: bool = False
    complement: bool = False
    gate_cue: str = ""
    abs_inner: bool = False
    dim_weights: tuple = (1.0, 1.0)
    value: float = 0.0
    inner: tuple = ()     # tuple of Term for gate
    enabled: bool = True

    def to_dict(self):
        d = {"kind": self.kind, "weight": self.weight, "enabled": self.enabled}
        per_kind = {
            "affine": ("cue", "a", "b"),
            "absdiff": ("cue", "target", "scale", "normalize_by_target"),
            "cosdiff": ("cue", "target"),
            "gate": ("gate_cue", "complement"),
            "product": ("gate_cue", "cue", "a", "b", "abs_inner"),
            "action_penalty": ("dim_weights",),
            "const": ("value",),
        }
        for k in per_kind[self.kind]:
            v = getattr(self, k)
            d[k] = list(v) if isinstance(v, tuple) else v
        if self.kind == "gate":
            d["inner"] = [t.to_dict() for t in self.inner]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "inner" in d:
            d["inner"] = tuple(cls.from_dict(t) for t in d["inner"])
        if "dim_weights" in d:
            d["dim_weights"] = tuple(d["dim_weights"])
        return cls(**d)


@dataclass
class RewardSpec:
    terms: list
    targets: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format_version": SPEC_FORMAT_VERSION,
            "terms": [t.to_dict() for t in self.terms],
            "targets": dict(self.targets),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(terms=[Term.from_dict(t) for t in d["terms"]],
                   targets=dict(d.get("targets", {})))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def spec_hash(self):
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    def scaled(self, factor):
        return RewardSpec([t.__class__(**{**t.__dict__,
                                          "weight": t.weight * factor})
                           for t in self.terms], dict(self.targets))

    def referenced_cues(self):
        names = set()

        def walk(term):
            for attr in ("cue", "gate_cue"):
                v = getattr(term, attr)
                if v:
                    names.add(v)
            for t in term.inner:
                walk(t)

        for t in self.terms:
            walk(t)
        return names

    def bind(self, cue_names):
        """Validate every referenced cue against the model's cue set."""
        unknown = self.referenced_cues() - set(cue_names)
        if unknown:
            raise SpecBindError("spec references unknown cues: %s"
                                % sorted(unknown))
        return self


def _wrap(a):
    return np.remainder(a + math.pi, 2.0 * math.pi) - math.pi


def _cue_scalar(cues, name):
    v = cues[name]
    return v[..., 0] if v.ndim == 3 else v


def _cue_angle(cues, name):
    v = cues[name]
    if v.shape[-1] != 2:
        raise SpecBindError("cue %r is not an angle pair" % name)
    return np.arctan2(v[..., 1], v[..., 0])


def _target(term, targets):
    if term.target not in targets:
        raise SpecBindError("spec targets missing %r" % term.target)
    return float(targets[term.target])


def _term_step_values(term, cues, actions, targets):
    """Per-step values (B, H) of one term (weight not applied)."""
    if term.kind == "affine":
        return term.a * _cue_scalar(cues, term.cue) + term.b
    if term.kind == "absdiff":
        tgt = _target(term, targets)
        scale = term.scale
        if term.normalize_by_target:
            scale = scale / max(abs(tgt), 1e-9)
        if term.cue == "heading":
            diff = np.abs(_wrap(_cue_angle(cues, term.cue) - tgt))
        else:
            diff = np.abs(_cue_scalar(cues, term.cue) - tgt)
        return -scale * diff
    if term.kind == "cosdiff":
        tgt = _target(term, targets)
        return np.cos(_cue_angle(cues, term.cue) - tgt) - 1.0
    if term.kind == "gate":
        g = _cue_scalar(cues, term.gate_cue)
        if term.complement:
            g = 1.0 - g
        inner = sum(t.weight * _term_step_values(t, cues, actions, targets)
                    for t in term.inner if t.enabled)
        return g * inner
    if term.kind == "product":
        g = _cue_scalar(cues, term.gate_cue)
        v = _cue_scalar(cues, term.cue)
        if term.abs_inner:
            v = np.abs(v)
        return g * (term.a * v + term.b)
    if term.kind == "action_penalty":
        w = np.asarray(term.dim_weights)
        return -np.sum(w * actions * actions, axis=-1)
    if term.kind == "const":
        return np.full(_any_shape(cues), term.value)
    raise SpecBindError("unknown term kind %r" % term.kind)


def _any_shape(cues):
    v = next(iter(cues.values()))
    return v.shape[:2]


def evaluate_reward_batch(spec, cues, actions):
    """Total reward per candidate: sum over the horizon of all weighted
    terms. cues: dict name -> (B, H[, dim]); actions: (B, H, ad)."""
    total = np.zeros(_any_shape(cues))
    for term in spec.terms:
        if not term.enabled:
            continue
        total += term.weight * _term_step_values(term, cues, actions,
                                                 spec.targets)
    return total.sum(axis=1)


def evaluate_reward(spec, cues, actions):
    """Single-trajectory reward. cues: dict name -> (H[, dim])."""
    b_cues = {k: v[None] for k, v in cues.items()}
    return float(evaluate_reward_batch(spec, b_cues,
                                       np.asarray(actions)[None])[0])


# ---------------------------------------------------------------------------
# presets


PRESETS = ("forest", "city_analogue", "indoor_analogue")


def build_spec(preset, targets=None):
    """Named task presets translated from the navigation reward shapes."""
    targets = dict(targets or {})
    targets.setdefault("goal_heading", 0.0)
    targets.setdefault("goal_speed", 1.0)
    if preset == "forest":
        terms = [
            Term("affine", weight=500.0, cue="coll", a=-1.0, b=1.0),
            Term("cosdiff", weight=1.0, cue="heading", target="goal_heading"),
        ]
    elif preset == "city_analogue":
        terms = [
            Term("affine", weight=50.0, cue="coll", a=-1.0, b=1.0),
            Term("absdiff", weight=3.0, cue="speed", target="goal_speed",
                 normalize_by_target=True),
            Term("product", weight=5.0, gate_cue="path_seen", cue="path_diff",
                 a=-1.0, b=1.0, abs_inner=True),
            Term("absdiff", weight=5.0 / math.pi, cue="heading",
                 target="goal_heading"),
            Term("action_penalty", weight=0.15, dim_weights=(1.0, 0.0)),
        ]
    elif preset == "indoor_analogue":
        terms = [
            Term("gate", weight=1.0, gate_cue="coll", complement=True,
                 inner=(
                     Term("const", weight=1.0, value=1.0),
                     Term("absdiff", weight=0.1 / math.pi, cue="heading",
                          target="goal_heading"),
                     Term("affine", weight=0.05, cue="beacon_frac"),
                 )),
            Term("action_penalty", weight=0.01, dim_weights=(1.0, 0.0)),
        ]
    else:
        raise ValueError("unknown preset %r" % preset)
    return RewardSpec(terms=terms, targets=targets)


# ---------------------------------------------------------------------------
# CEM


@dataclass(frozen=True)
class CemConfig:
    population: int = 256
    elites: int = 24
    iterations: int = 30
    init_std: tuple = None  # per action dim; default 0.3 * bound range
    std_floor: float = 1e-4
    warm_start_shift: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (1 <= self.elites < self.population):
            raise ValueError("need 1 <= elites < population")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")


# Lighter settings for the closed-loop MPC, where replanning every step
# compensates for a rougher per-step optimum.
MPC_CEM = CemConfig(population=64, elites=8, iterations=4, std_floor=0.02)


@dataclass
class PlanResult:
    actions: np.ndarray     # (H, ad) best-ever sampled sequence
    cues: dict              # predicted cue trajectory of that sequence
    reward: float
    elite_mean: np.ndarray
    elite_std: np.ndarray
    trace: list             # per-iteration population statistics


def default_init_mean(bounds, horizon):
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return np.tile((lo + hi) / 2.0, (horizon, 1))


def cem_plan(forward_fn, spec, cem, bounds, horizon, seed=None,
             init_mean=None):
    """Cross-entropy method over action sequences.

    forward_fn(A (B, H, ad)) -> cue dict. Samples per-timestep independent
    Gaussians clamped to bounds, refits mean/std to the elites, returns the
    best candidate ever scored. Ties break to the lowest sample index.
    Deterministic given the seed.
    """
    rng = np.random.default_rng(cem.seed if seed is None else seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    mean = (default_init_mean(bounds, horizon) if init_mean is None
            else np.array(init_mean, dtype=np.float64))
    if cem.init_std is None:
        std = np.tile(0.3 * (hi - lo), (horizon, 1))
    else:
        std = np.tile(np.asarray(cem.init_std, dtype=np.float64),
                      (horizon, 1))
    best_r = -math.inf
    best_a = None
    best_cues = None
    trace = []
    for _ in range(cem.iterations):
        noise = rng.standard_normal((cem.population, horizon, len(bounds)))
        cand = np.clip(mean + noise * std, lo, hi)
        cues = forward_fn(cand)
        r = evaluate_reward_batch(spec, cues, cand)
        order = np.argsort(-r, kind="stable")
        top = int(order[0])
        if r[top] > best_r:
            best_r = float(r[top])
            best_a = cand[top].copy()
            best_cues = {k: v[top].copy() for k, v in cues.items()}
        elite = cand[order[:cem.elites]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), cem.std_floor)
        trace.append({
            "pop_mean": float(r.mean()),
            "pop_max": float(r.max()),
            "elite_mean": float(r[order[:cem.elites]].mean()),
        })
    return PlanResult(actions=best_a, cues=best_cues, reward=best_r,
                      elite_mean=mean, elite_std=std, trace=trace)


def mpc_step(model, obs_history, spec, cem, carry=None, seed=None,
             bounds=None):
    """One MPC iteration: plan (warm-started from the shifted previous
    solution), return (first action to execute, PlanResult, new carry).

    bounds can be narrowed by the caller, e.g. pinning the speed dim to
    a fixed setpoint for steering-only tasks."""
    if bounds is None:
        bounds = ((-model.cfg.steer_max, model.cfg.steer_max),
                  (0.0, model.cfg.v_max))
    horizon = model.cfg.horizon
    init_mean = None
    if carry is not None and cem.warm_start_shift:
        init_mean = np.vstack([carry[1:],
                               default_init_mean(bounds, 1)])
    spec.bind(model.cue_names)
    res = cem_plan(lambda A: model.forward_candidates(obs_history, A),
                   spec, cem, bounds, horizon, seed=seed,
                   init_mean=init_mean)
    return res.actions[0], res, res.actions.copy()
