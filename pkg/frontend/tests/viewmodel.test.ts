import { describe, expect, it } from "vitest";
import {
  applyMessage, commandAccepted, commandRejected, connectionClosed,
  initialViewModel, tickStaleness, TRAIL_LIMIT,
} from "../src/viewmodel.js";
import { makeMessage } from "./fixtures.js";

describe("applyMessage", () => {
  it("stores the frame and extends the trail", () => {
    let vm = initialViewModel();
    vm = applyMessage(vm, makeMessage({ step: 1 }), 1000);
    vm = applyMessage(vm, makeMessage({
      step: 2, pose: { x: 2, y: 0, heading: 0, speed: 1, collided: false },
    }), 1250);
    expect(vm.latest?.step).toBe(2);
    expect(vm.trail).toEqual([[1.5, -2], [2, 0]]);
    expect(vm.connection).toBe("live");
    expect(vm.lastMessageAt).toBe(1250);
  });

  it("counts malformed payloads without dropping the last frame", () => {
    let vm = initialViewModel();
    vm = applyMessage(vm, makeMessage({ step: 1 }), 1000);
    vm = applyMessage(vm, { schema_version: 9 }, 1100);
    vm = applyMessage(vm, "garbage", 1200);
    expect(vm.parseErrors).toBe(2);
    expect(vm.latest?.step).toBe(1);
  });

  it("restarts the trail when the step counter goes backwards", () => {
    let vm = initialViewModel();
    vm = applyMessage(vm, makeMessage({ step: 40 }), 1000);
    vm = applyMessage(vm, makeMessage({ step: 41 }), 1100);
    vm = applyMessage(vm, makeMessage({ step: 0 }), 1200);
    expect(vm.trail).toHaveLength(1);
    expect(vm.latest?.step).toBe(0);
  });

  it("caps the trail length", () => {
    let vm = initialViewModel();
    for (let i = 0; i < TRAIL_LIMIT + 50; i++) {
      vm = applyMessage(vm, makeMessage({ step: i }), 1000 + i);
    }
    expect(vm.trail).toHaveLength(TRAIL_LIMIT);
  });
});

describe("staleness", () => {
  it("flags a silent stream after three step periods", () => {
    let vm = initialViewModel();
    vm = applyMessage(vm, makeMessage({ step: 1 }), 1000);
    expect(tickStaleness(vm, 1600).connection).toBe("live");
    expect(tickStaleness(vm, 1800).connection).toBe("stale");
  });

  it("never flags a paused session", () => {
    let vm = initialViewModel();
    vm = applyMessage(vm, makeMessage({ step: 1, paused: true }), 1000);
    expect(tickStaleness(vm, 99999).connection).toBe("live");
  });

  it("reports a closed socket", () => {
    let vm = initialViewModel();
    vm = applyMessage(vm, makeMessage({ step: 1 }), 1000);
    expect(connectionClosed(vm).connection).toBe("closed");
  });
});

describe("re-task confirmation", () => {
  it("confirms once the stream shows the acknowledged hash and step", () => {
    let vm = initialViewModel();
    vm = applyMessage(vm, makeMessage({ step: 5 }), 1000);
    vm = commandAccepted(vm, 6, "newhash");
    expect(vm.retaskConfirmed).toBe(false);
    // old hash still streaming: not confirmed yet
    vm = applyMessage(vm, makeMessage({ step: 6 }), 1100);
    expect(vm.retaskConfirmed).toBe(false);
    vm = applyMessage(vm,
      makeMessage({ step: 7, spec_hash: "newhash" }), 1200);
    expect(vm.retaskConfirmed).toBe(true);
  });

  it("does not confirm on a matching hash before the effective step", () => {
    let vm = initialViewModel();
    vm = commandAccepted(vm, 10, "h2");
    vm = applyMessage(vm, makeMessage({ step: 4, spec_hash: "h2" }), 1000);
    expect(vm.retaskConfirmed).toBe(false);
  });

  it("clears the pending marker on rejection", () => {
    let vm = initialViewModel();
    vm = commandAccepted(vm, 6, "h");
    vm = commandRejected(vm);
    expect(vm.pending).toBeNull();
    expect(vm.retaskConfirmed).toBe(false);
  });
});
