"""Deterministic 2D ground-vehicle simulator.

Kinematic bicycle with first-order speed lag, scanline raycast camera over
a world of circular obstacles, painted path markers and beacons. Identical
(config, seed, action stream) yields bit-identical trajectories and logs.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from capsnav import kernels

FORMAT_VERSION = 1

CLASS_FREE = 0
CLASS_OBSTACLE = 1
CLASS_PATH = 2
CLASS_BEACON = 3
N_CLASSES = 4

# Base intensity per class; rendered intensity = base * (1 - depth).
# Injective after depth unshading, so class is recoverable from the raster.
CLASS_INTENSITY = np.array([0.0, 0.25, 0.55, 0.9])

PATH_MARKER_SPACING = 0.5
PATH_MARKER_RADIUS = 0.18


class WorldGenerationError(RuntimeError):
    pass


def wrap_angle(a):
    """Wrap an angle to (-pi, pi]."""
    r = math.remainder(a, 2.0 * math.pi)
    if r <= -math.pi:
        r += 2.0 * math.pi
    return r


@dataclass(frozen=True)
class SimConfig:
    dt_action: float = 0.25
    substeps_per_action: int = 10
    wheelbase: float = 0.5
    car_radius: float = 0.35
    v_max: float = 2.0
    steer_max: float = 0.6
    speed_lag_tau: float = 0.4
    camera_fov: float = 1.8
    camera_columns: int = 64
    camera_range: float = 12.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.dt_action <= 0:
            raise ValueError("dt_action must be > 0")
        if self.substeps_per_action < 1:
            raise ValueError("substeps_per_action must be >= 1")
        if not (0.0 < self.camera_fov < math.pi):
            raise ValueError("camera_fov must be in (0, pi)")
        if self.camera_columns < 8:
            raise ValueError("camera_columns must be >= 8")

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "dt_action": self.dt_action,
            "substeps_per_action": self.substeps_per_action,
            "wheelbase": self.wheelbase,
            "car_radius": self.car_radius,
            "v_max": self.v_max,
            "steer_max": self.steer_max,
            "speed_lag_tau": self.speed_lag_tau,
            "camera_fov": self.camera_fov,
            "camera_columns": self.camera_columns,
            "camera_range": self.camera_range,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("format_version", None)
        return cls(**d)


@dataclass
class World:
    """Static scene: circular obstacles/beacons, a path polyline, bounds.

    obstacles / beacons: (N, 3) arrays of (cx, cy, radius).
    path: (P, 2) polyline, densely resampled.
    bounds: (xmin, ymin, xmax, ymax).
    """

    obstacles: np.ndarray
    beacons: np.ndarray
    path: np.ndarray
    bounds: tuple
    kind: str = ""
    seed: int = 0
    _scene: tuple = field(default=None, repr=False, compare=False)
    _arclen: np.ndarray = field(default=None, repr=False, compare=False)

    def scene_arrays(self):
        """(cx, cy, r, cls) for every raycastable entity, fixed order."""
        if self._scene is None:
            obs = self.obstacles.reshape(-1, 3)
            bea = self.beacons.reshape(-1, 3)
            mark = self.path
            cx = np.concatenate([obs[:, 0], mark[:, 0], bea[:, 0]])
            cy = np.concatenate([obs[:, 1], mark[:, 1], bea[:, 1]])
            cr = np.concatenate([
                obs[:, 2],
                np.full(len(mark), PATH_MARKER_RADIUS),
                bea[:, 2],
            ])
            cls = np.concatenate([
                np.full(len(obs), CLASS_OBSTACLE, dtype=np.int64),
                np.full(len(mark), CLASS_PATH, dtype=np.int64),
                np.full(len(bea), CLASS_BEACON, dtype=np.int64),
            ])
            self._scene = (cx, cy, cr, cls)
        return self._scene

    def arclengths(self):
        if self._arclen is None:
            seg = np.diff(self.path, axis=0)
            self._arclen = np.concatenate(
                [[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
        return self._arclen

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "kind": self.kind,
            "seed": self.seed,
            "obstacles": self.obstacles.reshape(-1, 3).tolist(),
            "beacons": self.beacons.reshape(-1, 3).tolist(),
            "path": self.path.tolist(),
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            obstacles=np.array(d["obstacles"], dtype=np.float64).reshape(-1, 3),
            beacons=np.array(d["beacons"], dtype=np.float64).reshape(-1, 3),
            path=np.array(d["path"], dtype=np.float64).reshape(-1, 2),
            bounds=tuple(d["bounds"]),
            kind=d.get("kind", ""),
            seed=int(d.get("seed", 0)),
        )

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class CarState:
    x: float
    y: float
    heading: float  # radians, (-pi, pi]
    speed: float
    collided: bool = False


@dataclass(frozen=True)
class Action:
    steer: float
    speed_setpoint: float


@dataclass(frozen=True)
class Observation:
    camera: np.ndarray  # (W, 2): intensity, normalized depth
    speed: float
    heading_cos: float
    heading_sin: float
    collided: bool


@dataclass(frozen=True)
class OracleFrame:
    classes: np.ndarray  # (W,) per-column class id
    path_seen: bool
    path_diff: float
    beacon_frac: float
    signed_path_dist: float


@dataclass
class StepRecord:
    obs: Observation
    action: Action  # None on the terminal record
    oracle: OracleFrame
    state: CarState


@dataclass
class EpisodeLog:
    steps: list  # T StepRecords with actions, plus one terminal record
    collided: bool
    valid: bool = True
    policy_tag: str = ""
    world_seed: int = 0
    cues: object = None  # attached by cue labeling

    @property
    def n_actions(self):
        return len(self.steps) - 1


# ---------------------------------------------------------------------------
# world generation


def _resample_polyline(points, spacing):
    points = np.asarray(points, dtype=np.float64)
    seg = np.diff(points, axis=0)
    lens = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    total = cum[-1]
    n = max(int(total / spacing) + 1, 2)
    s = np.linspace(0.0, total, n)
    x = np.interp(s, cum, points[:, 0])
    y = np.interp(s, cum, points[:, 1])
    return np.stack([x, y], axis=1)


def point_polyline_distance(p, path):
    """Signed distance from p to the polyline (positive = left of travel)."""
    a = path[:-1]
    b = path[1:]
    ab = b - a
    ap = p[None, :] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.clip(np.einsum("ij,ij->i", ap, ab) / np.maximum(denom, 1e-12), 0.0, 1.0)
    proj = a + t[:, None] * ab
    d = np.hypot(p[0] - proj[:, 0], p[1] - proj[:, 1])
    i = int(np.argmin(d))
    cross = ab[i, 0] * (p[1] - a[i, 1]) - ab[i, 1] * (p[0] - a[i, 0])
    return float(d[i]) if cross >= 0 else -float(d[i])


def path_progress(world, p):
    """Arclength of the path point nearest to p."""
    path = world.path
    d = np.hypot(path[:, 0] - p[0], path[:, 1] - p[1])
    return float(world.arclengths()[int(np.argmin(d))])


def path_target(world, p, lookahead):
    """Point on the path `lookahead` meters of arclength ahead of the
    nearest point to p, with the local tangent heading."""
    path = world.path
    d = np.hypot(path[:, 0] - p[0], path[:, 1] - p[1])
    i = int(np.argmin(d))
    arc = world.arclengths()
    s = min(arc[i] + lookahead, arc[-1])
    x = float(np.interp(s, arc, path[:, 0]))
    y = float(np.interp(s, arc, path[:, 1]))
    s2 = min(s + 0.5, arc[-1])
    x2 = float(np.interp(s2, arc, path[:, 0]))
    y2 = float(np.interp(s2, arc, path[:, 1]))
    if s2 > s:
        tangent = math.atan2(y2 - y, x2 - x)
    else:
        tangent = math.atan2(path[-1, 1] - path[-2, 1], path[-1, 0] - path[-2, 0])
    return np.array([x, y]), tangent


def _place_circles(rng, n, r_lo, r_hi, bounds, path, min_path_clearance,
                   max_tries=4000):
    placed = []
    xmin, ymin, xmax, ymax = bounds
    tries = 0
    while len(placed) < n:
        tries += 1
        if tries > max_tries:
            raise WorldGenerationError(
                "could not place %d entities (placed %d)" % (n, len(placed)))
        r = rng.uniform(r_lo, r_hi)
        x = rng.uniform(xmin + r, xmax - r)
        y = rng.uniform(ymin + r, ymax - r)
        d = abs(point_polyline_distance(np.array([x, y]), path))
        if d < min_path_clearance + r:
            continue
        placed.append((x, y, r))
    return np.array(placed, dtype=np.float64).reshape(-1, 3)


def _place_beacons(rng, n, path, bounds, offset_lo, offset_hi, radius):
    arc_total = None
    placed = []
    xmin, ymin, xmax, ymax = bounds
    seg = np.diff(path, axis=0)
    cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
    arc_total = cum[-1]
    tries = 0
    while len(placed) < n:
        tries += 1
        if tries > 2000:
            raise WorldGenerationError("could not place %d beacons" % n)
        s = rng.uniform(0.0, arc_total)
        x = float(np.interp(s, cum, path[:, 0]))
        y = float(np.interp(s, cum, path[:, 1]))
        i = min(int(np.searchsorted(cum, s)), len(seg) - 1)
        tx, ty = seg[i] / max(np.hypot(*seg[i]), 1e-9)
        side = 1.0 if rng.random() < 0.5 else -1.0
        off = rng.uniform(offset_lo, offset_hi)
        bx = x - side * ty * off
        by = y + side * tx * off
        if not (xmin + radius < bx < xmax - radius
                and ymin + radius < by < ymax - radius):
            continue
        placed.append((bx, by, radius))
    return np.array(placed, dtype=np.float64).reshape(-1, 3)


CIRCLE_DEFAULTS = {
    "radius": 20.0, "direction": 1, "n_obstacles": 40, "n_beacons": 10,
    "obstacle_radius": (0.3, 0.8), "path_clearance": 1.2,
    "beacon_offset": (1.5, 4.0), "beacon_radius": 0.5, "margin": 8.0,
}
SINUSOID_DEFAULTS = {
    "amplitude": 4.0, "period": 30.0, "length": 60.0,
    "n_obstacles": 120, "n_beacons": 0,
    "obstacle_radius": (0.3, 0.8), "path_clearance": 1.6,
    "beacon_offset": (1.5, 4.0), "beacon_radius": 0.5, "margin": 10.0,
}
CORRIDOR_DEFAULTS = {
    "length": 40.0, "n_obstacles": 0, "beacon_spacing": 3.5,
    "beacon_offset": 2.0, "beacon_radius": 0.7,
    "obstacle_radius": (0.3, 0.8), "path_clearance": 1.6, "margin": 8.0,
}


def generate_world(kind, params=None, seed=0):
    """Build a World. Same (kind, params, seed) gives an identical World."""
    params = dict(params or {})
    rng = np.random.default_rng(seed)
    if kind == "circle_path":
        p = {**CIRCLE_DEFAULTS, **params}
        if p["radius"] <= 0:
            raise ValueError("radius must be > 0")
        r = p["radius"]
        m = p["margin"]
        sweep = 2.0 * math.pi * (-1.0 if p.get("direction", 1) < 0 else 1.0)
        ang = np.linspace(0.0, sweep, 257)
        way = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
        path = _resample_polyline(way, PATH_MARKER_SPACING)
        bounds = (-r - m, -r - m, r + m, r + m)
    elif kind == "sinusoid_path":
        p = {**SINUSOID_DEFAULTS, **params}
        if p["amplitude"] < 0 or p["period"] <= 0 or p["length"] <= 0:
            raise ValueError("need amplitude >= 0, period > 0, length > 0")
        amp, per, ln, m = p["amplitude"], p["period"], p["length"], p["margin"]
        x = np.linspace(0.0, ln, max(int(ln / 0.25), 2))
        way = np.stack([x, amp * np.sin(2.0 * math.pi * x / per)], axis=1)
        path = _resample_polyline(way, PATH_MARKER_SPACING)
        bounds = (-m, -amp - m, ln + m, amp + m)
    elif kind == "beacon_corridor":
        p = {**CORRIDOR_DEFAULTS, **params}
        if p["length"] <= 0:
            raise ValueError("length must be > 0")
        ln, m = p["length"], p["margin"]
        way = np.array([[0.0, 0.0], [0.45 * ln, 0.0],
                        [0.55 * ln, 0.25 * ln], [ln, 0.25 * ln]])
        path = _resample_polyline(way, PATH_MARKER_SPACING)
        bounds = (-m, -m, ln + m, 0.25 * ln + m)
    else:
        raise ValueError("unknown world kind: %r" % (kind,))

    r_lo, r_hi = p["obstacle_radius"]
    obstacles = _place_circles(rng, int(p["n_obstacles"]), r_lo, r_hi,
                               bounds, path, p["path_clearance"])
    if kind == "beacon_corridor":
        # Regular alternating beacons so runs down the corridor pass a
        # predictable amount of beacon surface.
        arc = np.arange(3.0, float(np.sum(np.hypot(*np.diff(path, axis=0).T))),
                        p["beacon_spacing"])
        seg = np.diff(path, axis=0)
        cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])
        beacons = []
        for k, s in enumerate(arc):
            x = float(np.interp(s, cum, path[:, 0]))
            y = float(np.interp(s, cum, path[:, 1]))
            i = min(int(np.searchsorted(cum, s)), len(seg) - 1)
            tx, ty = seg[i] / max(np.hypot(*seg[i]), 1e-9)
            side = 1.0 if k % 2 == 0 else -1.0
            beacons.append((x - side * ty * p["beacon_offset"],
                            y + side * tx * p["beacon_offset"],
                            p["beacon_radius"]))
        beacons = np.array(beacons, dtype=np.float64).reshape(-1, 3)
    else:
        lo, hi = p["beacon_offset"]
        beacons = _place_beacons(rng, int(p["n_beacons"]), path, bounds,
                                 lo, hi, p["beacon_radius"])
    return World(obstacles=obstacles, beacons=beacons, path=path,
                 bounds=bounds, kind=kind, seed=int(seed))


# ---------------------------------------------------------------------------
# dynamics


def _clamp_action(action, cfg):
    steer = min(max(action.steer, -cfg.steer_max), cfg.steer_max)
    sp = min(max(action.speed_setpoint, 0.0), cfg.v_max)
    return steer, sp


def _collides(x, y, world, cfg):
    xmin, ymin, xmax, ymax = world.bounds
    if (x < xmin + cfg.car_radius or x > xmax - cfg.car_radius
            or y < ymin + cfg.car_radius or y > ymax - cfg.car_radius):
        return True
    obs = world.obstacles
    if len(obs):
        d2 = (obs[:, 0] - x) ** 2 + (obs[:, 1] - y) ** 2
        if np.any(d2 <= (obs[:, 2] + cfg.car_radius) ** 2):
            return True
    return False


def step(state, action, world, cfg):
    """Advance one action period. Returns (new_state, collided_this_step).

    Collision stops the car and latches state.collided; a collided state
    never moves again.
    """
    if state.collided:
        return state, False
    steer, sp = _clamp_action(action, cfg)
    ds = cfg.dt_action / cfg.substeps_per_action
    decay = math.exp(-ds / cfg.speed_lag_tau)
    x, y, th, v = state.x, state.y, state.heading, state.speed
    collided = False
    for _ in range(cfg.substeps_per_action):
        v = sp + (v - sp) * decay
        v = min(max(v, 0.0), cfg.v_max)
        x += v * math.cos(th) * ds
        y += v * math.sin(th) * ds
        th = wrap_angle(th + (v / cfg.wheelbase) * math.tan(steer) * ds)
        if _collides(x, y, world, cfg):
            v = 0.0
            collided = True
            break
    return CarState(x=x, y=y, heading=th, speed=v, collided=collided), collided


# ---------------------------------------------------------------------------
# sensing


def _column_angles(state, cfg):
    w = cfg.camera_columns
    bearings = -cfg.camera_fov / 2.0 + (np.arange(w) + 0.5) * (cfg.camera_fov / w)
    return state.heading + bearings


def _raycast_columns(state, world, cfg):
    cx, cy, cr, cls = world.scene_arrays()
    return kernels.raycast(state.x, state.y, _column_angles(state, cfg),
                           cx, cy, cr, cls, cfg.camera_range)


def render_camera(state, world, cfg):
    """(W, 2) raster: class intensity with depth shading, normalized depth."""
    dist, cls = _raycast_columns(state, world, cfg)
    depth = dist / cfg.camera_range
    intensity = CLASS_INTENSITY[cls] * (1.0 - depth)
    return np.stack([intensity, depth], axis=1)


def cues_from_classes(classes):
    """(beacon_frac, path_seen, path_diff) from per-column class labels."""
    w = len(classes)
    center = (w - 1) / 2.0
    path_cols = np.nonzero(classes == CLASS_PATH)[0]
    beacon_frac = float(np.count_nonzero(classes == CLASS_BEACON)) / w
    if len(path_cols) == 0:
        return beacon_frac, False, 0.0
    path_diff = (float(np.mean(path_cols)) - center) / center
    return beacon_frac, True, path_diff


def observe(state, world, cfg):
    return Observation(
        camera=render_camera(state, world, cfg),
        speed=state.speed,
        heading_cos=math.cos(state.heading),
        heading_sin=math.sin(state.heading),
        collided=state.collided,
    )


def oracle_ground_truth(state, world, cfg):
    """Ground-truth frame for labeling and evaluation only; never fed to
    the planner."""
    _, cls = _raycast_columns(state, world, cfg)
    beacon_frac, path_seen, path_diff = cues_from_classes(cls)
    sd = point_polyline_distance(np.array([state.x, state.y]), world.path)
    return OracleFrame(classes=cls, path_seen=path_seen, path_diff=path_diff,
                       beacon_frac=beacon_frac, signed_path_dist=sd)


# ---------------------------------------------------------------------------
# episodes


def spawn_pose(world, cfg, rng, near_start=True):
    """Random collision-free pose on/near the path (tangent heading)."""
    arc = world.arclengths()
    for _ in range(200):
        if near_start:
            s = rng.uniform(0.0, min(0.25 * arc[-1], arc[-1]))
        else:
            s = rng.uniform(0.0, arc[-1])
        x = float(np.interp(s, arc, world.path[:, 0])) + rng.normal(0.0, 0.4)
        y = float(np.interp(s, arc, world.path[:, 1])) + rng.normal(0.0, 0.4)
        _, tangent = path_target(world, np.array([x, y]), 0.0)
        th = wrap_angle(tangent + rng.normal(0.0, 0.25))
        if not _collides(x, y, world, cfg):
            return CarState(x=x, y=y, heading=th, speed=0.0, collided=False)
    raise WorldGenerationError("no collision-free spawn pose found")


def run_episode(policy, world, cfg, max_steps, init_state=None,
                policy_tag=""):
    """Step the policy until collision or max_steps.

    `policy` is a callback(list of Observations so far) -> Action. A policy
    failure aborts the episode; the partial log is flagged invalid.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    state = init_state
    if state is None:
        state = spawn_pose(world, cfg, np.random.default_rng(cfg.rng_seed))
    steps = []
    obs_history = []
    valid = True
    for _ in range(max_steps):
        obs = observe(state, world, cfg)
        oracle = oracle_ground_truth(state, world, cfg)
        obs_history.append(obs)
        if getattr(policy, "uses_ground_truth", False):
            policy.state = state  # scripted data-collection policies only
        try:
            action = policy(obs_history)
        except Exception:
            valid = False
            break
        state_next, collided = step(state, action, world, cfg)
        steps.append(StepRecord(obs=obs, action=action, oracle=oracle,
                                state=state))
        state = state_next
        if collided:
            break
    # terminal record (no action); carries the latched collided flag
    steps.append(StepRecord(obs=observe(state, world, cfg), action=None,
                            oracle=oracle_ground_truth(state, world, cfg),
                            state=state))
    return EpisodeLog(steps=steps, collided=state.collided, valid=valid,
                      policy_tag=policy_tag, world_seed=world.seed)
