/** Shared builders for well-formed stream payloads. */

export function makeMessage(overrides: Record<string, unknown> = {},
                            horizon = 4): Record<string, unknown> {
  const actions = Array.from({ length: horizon }, () => [1.0, 0.0]);
  const rollout = Array.from({ length: horizon + 1 },
                             (_, i) => [i * 0.25, 0.0]);
  return {
    schema_version: 1,
    session: "abc123",
    step: 7,
    paused: false,
    pose: { x: 1.5, y: -2.0, heading: 0.3, speed: 1.1, collided: false },
    spec_hash: "deadbeef",
    step_period: 0.25,
    plan: {
      actions,
      reward: 3.5,
      predicted: {
        coll: Array.from({ length: horizon }, () => [0.1]),
        heading: Array.from({ length: horizon }, () => 0.2),
      },
    },
    debug_truth: {
      world: {
        kind: "corridor",
        path: [[0, 0], [10, 0]],
        obstacles: [[4, 1, 0.5]],
        beacons: [[6, -1, 0.6]],
        bounds: [-1, -4, 12, 4],
      },
      rollout,
    },
    ...overrides,
  };
}
