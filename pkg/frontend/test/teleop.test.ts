import { describe, expect, it } from "vitest";

import { buildTeleop, jawToggleMessage, respectsClamps, STEP_M, STEP_YAW_RAD }
  from "../src/teleop.js";

const snap = (keys: string[], shift = false) =>
  ({ pressed: new Set(keys), shift });

describe("key bindings", () => {
  it("returns null with no input", () => {
    expect(buildTeleop(snap([]), true)).toBeNull();
  });

  it("maps arrows and wasd onto x/y", () => {
    expect(buildTeleop(snap(["arrowup"]), true)).toMatchObject({ dy: STEP_M, dx: 0, dz: 0 });
    expect(buildTeleop(snap(["s"]), true)).toMatchObject({ dy: -STEP_M });
    expect(buildTeleop(snap(["arrowleft"]), true)).toMatchObject({ dx: -STEP_M });
    expect(buildTeleop(snap(["d"]), true)).toMatchObject({ dx: STEP_M });
  });

  it("shift turns vertical motion into z", () => {
    expect(buildTeleop(snap(["arrowup"], true), true)).toMatchObject({ dz: STEP_M, dy: 0 });
    expect(buildTeleop(snap(["s"], true), true)).toMatchObject({ dz: -STEP_M, dy: 0 });
  });

  it("q/e yaw and jaw rides along every message", () => {
    expect(buildTeleop(snap(["q"]), false)).toMatchObject({ dyaw: STEP_YAW_RAD, j: -1.0 });
    expect(buildTeleop(snap(["e"]), true)).toMatchObject({ dyaw: -STEP_YAW_RAD, j: 1.0 });
  });

  it("opposing keys cancel to null", () => {
    expect(buildTeleop(snap(["arrowup", "arrowdown"]), true)).toBeNull();
  });
});

describe("clamp contract", () => {
  it("every emitted payload respects the simulator clamps", () => {
    const combos: string[][] = [
      ["arrowup"], ["arrowup", "arrowright"], ["w", "d", "q"],
      ["arrowdown", "arrowleft", "e"], ["w", "a", "s", "d", "q", "e"],
    ];
    for (const keys of combos) {
      for (const shift of [false, true]) {
        const p = buildTeleop(snap(keys, shift), true);
        if (p) expect(respectsClamps(p)).toBe(true);
      }
    }
    expect(respectsClamps(jawToggleMessage(false))).toBe(true);
  });
});
