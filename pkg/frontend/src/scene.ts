/**
 * Pure scene construction: ViewModel -> display list. The canvas
 * adapter draws display items verbatim, so everything visual is unit
 * testable without a DOM.
 */

import { StreamMessage } from "./schema.js";
import { ViewModel } from "./viewmodel.js";

export interface Polyline {
  kind: "polyline";
  points: number[][];
  color: string;
  width: number;
  dashed?: boolean;
}

export interface Circle {
  kind: "circle";
  x: number;
  y: number;
  r: number;
  color: string;
  fill: boolean;
}

export interface Marker {
  kind: "marker";
  x: number;
  y: number;
  heading: number;
  size: number;
  color: string;
}

export interface Bar {
  kind: "bar";
  index: number;
  value: number; // 0..1
  color: string;
}

export interface Badge {
  kind: "badge";
  id: string;
  text: string;
  tone: "ok" | "warn" | "error" | "info";
}

export type SceneItem = Polyline | Circle | Marker | Bar | Badge;

export interface Scene {
  /** world-space items for the birds-eye canvas */
  world: SceneItem[];
  /** one bar per planned step: predicted collision probability */
  collisionBars: Bar[];
  /** status badges (connection, spec hash, errors) */
  badges: Badge[];
  /** world-space view box [xmin, ymin, xmax, ymax] */
  viewBox: number[] | null;
}

export const COLORS = {
  path: "#8a8a3a",
  obstacle: "#555555",
  beacon: "#2e9df7",
  trail: "#d07000",
  rollout: "#19b56b",
  car: "#d04040",
};

function worldItems(msg: StreamMessage, trail: number[][]): SceneItem[] {
  const items: SceneItem[] = [];
  const w = msg.debug_truth.world;
  items.push({ kind: "polyline", points: w.path, color: COLORS.path,
               width: 2 });
  for (const o of w.obstacles) {
    items.push({ kind: "circle", x: o[0], y: o[1], r: o[2],
                 color: COLORS.obstacle, fill: true });
  }
  for (const b of w.beacons) {
    items.push({ kind: "circle", x: b[0], y: b[1], r: b[2],
                 color: COLORS.beacon, fill: false });
  }
  if (trail.length > 1) {
    items.push({ kind: "polyline", points: trail, color: COLORS.trail,
                 width: 1.5 });
  }
  const rollout = msg.debug_truth.rollout;
  if (msg.plan !== null && rollout !== null) {
    items.push({ kind: "polyline", points: rollout, color: COLORS.rollout,
                 width: 2, dashed: true });
  }
  items.push({ kind: "marker", x: msg.pose.x, y: msg.pose.y,
               heading: msg.pose.heading, size: 0.9,
               color: COLORS.car });
  return items;
}

function collisionBars(msg: StreamMessage): Bar[] {
  if (msg.plan === null) {
    return [];
  }
  const coll = msg.plan.predicted["coll"];
  if (!coll) {
    return [];
  }
  return (coll as unknown[]).map((v, i) => {
    const p = Array.isArray(v) ? (v as number[])[0] : (v as number);
    const clamped = Math.min(Math.max(p, 0), 1);
    return {
      kind: "bar" as const,
      index: i,
      value: clamped,
      color: clamped > 0.5 ? "#d04040" : "#6a9f58",
    };
  });
}

function badges(vm: ViewModel): Badge[] {
  const out: Badge[] = [];
  const conn = vm.connection;
  out.push({
    kind: "badge", id: "connection", text: conn,
    tone: conn === "live" ? "ok" : conn === "connecting" ? "info" : "warn",
  });
  if (vm.latest !== null) {
    out.push({
      kind: "badge", id: "spec-hash", text: vm.latest.spec_hash,
      // highlighted while a re-task is pending, calm once confirmed
      tone: vm.pending !== null && !vm.retaskConfirmed ? "warn"
        : vm.retaskConfirmed ? "ok" : "info",
    });
    if (vm.latest.paused) {
      out.push({ kind: "badge", id: "paused", text: "paused",
                 tone: "info" });
    }
  }
  if (vm.parseErrors > 0) {
    out.push({ kind: "badge", id: "parse-errors",
               text: `${vm.parseErrors} bad messages`, tone: "error" });
  }
  return out;
}

/** Build the full frame. Pure: same ViewModel, same scene. */
export function buildScene(vm: ViewModel): Scene {
  if (vm.latest === null) {
    return { world: [], collisionBars: [], badges: badges(vm),
             viewBox: null };
  }
  return {
    world: worldItems(vm.latest, vm.trail),
    collisionBars: collisionBars(vm.latest),
    badges: badges(vm),
    viewBox: vm.latest.debug_truth.world.bounds,
  };
}

/** Number of segments of the planned rollout polyline in a scene
 * (the H-step plan renders as exactly H segments). */
export function rolloutSegmentCount(scene: Scene): number {
  const rollout = scene.world.find(
    (it) => it.kind === "polyline" && it.color === COLORS.rollout);
  if (!rollout) {
    return 0;
  }
  return (rollout as Polyline).points.length - 1;
}
