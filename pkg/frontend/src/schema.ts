/**
 * Wire schema for the steering service stream and command endpoints.
 * Hand-rolled validation so the console has zero runtime dependencies;
 * every malformed field produces a named error instead of a crash.
 */

export interface Pose {
  x: number;
  y: number;
  heading: number;
  speed: number;
  collided: boolean;
}

export interface Plan {
  actions: number[][];
  reward: number;
  predicted: Record<string, number[] | number[][]>;
}

export interface WorldGeometry {
  kind: string;
  path: number[][];
  obstacles: number[][];
  beacons: number[][];
  bounds: number[];
}

export interface DebugTruth {
  world: WorldGeometry;
  rollout: number[][] | null;
}

export interface StreamMessage {
  schema_version: number;
  session: string;
  step: number;
  paused: boolean;
  pose: Pose;
  spec_hash: string;
  step_period: number;
  plan: Plan | null;
  debug_truth: DebugTruth;
}

export interface GoalAck {
  effective_step: number;
  spec_hash: string;
}

export class SchemaError extends Error {
  constructor(public field: string, detail: string) {
    super(`bad stream message at ${field}: ${detail}`);
  }
}

function num(v: unknown, field: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) {
    throw new SchemaError(field, `expected finite number, got ${v}`);
  }
  return v;
}

function bool(v: unknown, field: string): boolean {
  if (typeof v !== "boolean") {
    throw new SchemaError(field, "expected boolean");
  }
  return v;
}

function str(v: unknown, field: string): string {
  if (typeof v !== "string" || v.length === 0) {
    throw new SchemaError(field, "expected non-empty string");
  }
  return v;
}

function pointList(v: unknown, field: string, width?: number): number[][] {
  if (!Array.isArray(v)) {
    throw new SchemaError(field, "expected array");
  }
  return v.map((row, i) => {
    if (!Array.isArray(row) || (width !== undefined && row.length !== width)) {
      throw new SchemaError(`${field}[${i}]`, "bad row shape");
    }
    return row.map((x, j) => num(x, `${field}[${i}][${j}]`));
  });
}

function parsePose(v: unknown, field: string): Pose {
  const o = v as Record<string, unknown>;
  if (typeof o !== "object" || o === null) {
    throw new SchemaError(field, "expected object");
  }
  return {
    x: num(o.x, `${field}.x`),
    y: num(o.y, `${field}.y`),
    heading: num(o.heading, `${field}.heading`),
    speed: num(o.speed, `${field}.speed`),
    collided: bool(o.collided, `${field}.collided`),
  };
}

function parsePlan(v: unknown): Plan | null {
  if (v === null || v === undefined) {
    return null;
  }
  const o = v as Record<string, unknown>;
  const actions = pointList(o.actions, "plan.actions");
  if (actions.length === 0) {
    throw new SchemaError("plan.actions", "empty action sequence");
  }
  const predicted: Plan["predicted"] = {};
  const rawPred = o.predicted as Record<string, unknown>;
  if (typeof rawPred !== "object" || rawPred === null) {
    throw new SchemaError("plan.predicted", "expected object");
  }
  for (const [cue, arr] of Object.entries(rawPred)) {
    if (!Array.isArray(arr)) {
      throw new SchemaError(`plan.predicted.${cue}`, "expected array");
    }
    if (arr.length > 0 && Array.isArray(arr[0])) {
      predicted[cue] = pointList(arr, `plan.predicted.${cue}`);
    } else {
      predicted[cue] = arr.map((x, i) =>
        num(x, `plan.predicted.${cue}[${i}]`));
    }
  }
  return { actions, reward: num(o.reward, "plan.reward"), predicted };
}

function parseWorld(v: unknown): WorldGeometry {
  const o = v as Record<string, unknown>;
  if (typeof o !== "object" || o === null) {
    throw new SchemaError("debug_truth.world", "expected object");
  }
  const bounds = o.bounds;
  if (!Array.isArray(bounds) || bounds.length !== 4) {
    throw new SchemaError("debug_truth.world.bounds", "expected 4 numbers");
  }
  return {
    kind: str(o.kind, "debug_truth.world.kind"),
    path: pointList(o.path, "debug_truth.world.path", 2),
    obstacles: pointList(o.obstacles, "debug_truth.world.obstacles"),
    beacons: pointList(o.beacons, "debug_truth.world.beacons"),
    bounds: bounds.map((x, i) => num(x, `debug_truth.world.bounds[${i}]`)),
  };
}

/** Parse and validate one raw stream payload (already JSON-decoded). */
export function parseStreamMessage(raw: unknown): StreamMessage {
  const o = raw as Record<string, unknown>;
  if (typeof o !== "object" || o === null) {
    throw new SchemaError("$", "expected object");
  }
  const version = num(o.schema_version, "schema_version");
  if (version !== 1) {
    throw new SchemaError("schema_version", `unsupported version ${version}`);
  }
  const truth = o.debug_truth as Record<string, unknown>;
  if (typeof truth !== "object" || truth === null) {
    throw new SchemaError("debug_truth", "expected object");
  }
  const rollout = truth.rollout === null || truth.rollout === undefined
    ? null
    : pointList(truth.rollout, "debug_truth.rollout", 2);
  const plan = parsePlan(o.plan);
  if (plan !== null && rollout !== null
      && rollout.length !== plan.actions.length + 1) {
    throw new SchemaError("debug_truth.rollout",
      `expected ${plan.actions.length + 1} points, got ${rollout.length}`);
  }
  return {
    schema_version: version,
    session: str(o.session, "session"),
    step: num(o.step, "step"),
    paused: bool(o.paused, "paused"),
    pose: parsePose(o.pose, "pose"),
    spec_hash: str(o.spec_hash, "spec_hash"),
    step_period: num(o.step_period, "step_period"),
    plan,
    debug_truth: { world: parseWorld(truth.world), rollout },
  };
}

export function parseGoalAck(raw: unknown): GoalAck {
  const o = raw as Record<string, unknown>;
  if (typeof o !== "object" || o === null) {
    throw new SchemaError("$", "expected object");
  }
  return {
    effective_step: num(o.effective_step, "effective_step"),
    spec_hash: str(o.spec_hash, "spec_hash"),
  };
}
