/**
 * Console state: latest validated stream message, executed trail,
 * connection/staleness status, and pending-command tracking.
 *
 * The view model is plain data updated by pure functions; rendering and
 * transports live elsewhere. The UI computes no physics: everything
 * drawn comes straight from stream messages.
 */

import { parseStreamMessage, StreamMessage } from "./schema.js";

export type Connection = "connecting" | "live" | "stale" | "closed";

export interface PendingCommand {
  effectiveStep: number;
  specHash: string;
}

export interface ViewModel {
  latest: StreamMessage | null;
  /** executed car positions, oldest first */
  trail: number[][];
  connection: Connection;
  /** wall-clock ms of the last accepted message */
  lastMessageAt: number | null;
  pending: PendingCommand | null;
  /** true once the stream shows the acknowledged spec hash */
  retaskConfirmed: boolean;
  parseErrors: number;
}

export const TRAIL_LIMIT = 600;
/** stream counts as stale after this many step periods of silence */
export const STALE_PERIODS = 3;

export function initialViewModel(): ViewModel {
  return {
    latest: null,
    trail: [],
    connection: "connecting",
    lastMessageAt: null,
    pending: null,
    retaskConfirmed: false,
    parseErrors: 0,
  };
}

/** Fold one raw stream payload into the view model. Malformed messages
 * are counted and skipped; the previous frame stays on screen. */
export function applyMessage(vm: ViewModel, raw: unknown,
                             nowMs: number): ViewModel {
  let msg: StreamMessage;
  try {
    msg = parseStreamMessage(raw);
  } catch {
    return { ...vm, parseErrors: vm.parseErrors + 1 };
  }
  if (vm.latest !== null && msg.step < vm.latest.step) {
    // reset on the service side: restart the trail
    return {
      ...vm,
      latest: msg,
      trail: [[msg.pose.x, msg.pose.y]],
      connection: "live",
      lastMessageAt: nowMs,
      retaskConfirmed: isConfirmed(vm.pending, msg),
    };
  }
  const trail = [...vm.trail, [msg.pose.x, msg.pose.y]];
  if (trail.length > TRAIL_LIMIT) {
    trail.splice(0, trail.length - TRAIL_LIMIT);
  }
  return {
    ...vm,
    latest: msg,
    trail,
    connection: "live",
    lastMessageAt: nowMs,
    retaskConfirmed: isConfirmed(vm.pending, msg),
  };
}

function isConfirmed(pending: PendingCommand | null,
                     msg: StreamMessage): boolean {
  return pending !== null && msg.spec_hash === pending.specHash
    && msg.step >= pending.effectiveStep;
}

/** Re-derive connection status from the wall clock. */
export function tickStaleness(vm: ViewModel, nowMs: number): ViewModel {
  if (vm.latest === null || vm.lastMessageAt === null) {
    return vm;
  }
  const budget = STALE_PERIODS * vm.latest.step_period * 1000;
  const stale = nowMs - vm.lastMessageAt > budget;
  if (vm.latest.paused) {
    // a paused session idles by design; do not flag it as stale
    return vm.connection === "live" ? vm : { ...vm, connection: "live" };
  }
  const connection: Connection = stale ? "stale" : "live";
  return vm.connection === connection ? vm : { ...vm, connection };
}

/** An accepted goal command: remember the acknowledgment until the
 * stream reflects it. */
export function commandAccepted(vm: ViewModel, effectiveStep: number,
                                specHash: string): ViewModel {
  return {
    ...vm,
    pending: { effectiveStep, specHash },
    retaskConfirmed: false,
  };
}

/** A rejected command clears the pending marker; form values are owned
 * by the form state and remain untouched. */
export function commandRejected(vm: ViewModel): ViewModel {
  return { ...vm, pending: null, retaskConfirmed: false };
}

export function connectionClosed(vm: ViewModel): ViewModel {
  return { ...vm, connection: "closed" };
}
