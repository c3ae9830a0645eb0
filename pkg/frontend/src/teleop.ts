// Keyboard state -> teleop payloads. Arrow keys or WASD drive x/y, holding
// Shift turns vertical arrows into z motion, Q/E turn the tip, and Space
// toggles the jaw. Emitted deltas equal the simulator's per-step clamps, so
// nothing the console sends can be out of range.

export const STEP_M = 0.005;
export const STEP_YAW_RAD = 0.2618; // 15 degrees

export interface TeleopPayload {
  type: "teleop";
  dx: number;
  dy: number;
  dz: number;
  dyaw: number;
  j: number;
}

export interface KeySnapshot {
  pressed: Set<string>; // KeyboardEvent.key values, lowercase
  shift: boolean;
}

export function buildTeleop(keys: KeySnapshot, jawOpen: boolean): TeleopPayload | null {
  let dx = 0;
  let dy = 0;
  let dz = 0;
  let dyaw = 0;
  const has = (k: string) => keys.pressed.has(k);

  const up = has("arrowup") || has("w");
  const down = has("arrowdown") || has("s");
  if (keys.shift) {
    if (up) dz += STEP_M;
    if (down) dz -= STEP_M;
  } else {
    if (up) dy += STEP_M;
    if (down) dy -= STEP_M;
  }
  if (has("arrowleft") || has("a")) dx -= STEP_M;
  if (has("arrowright") || has("d")) dx += STEP_M;
  if (has("q")) dyaw += STEP_YAW_RAD;
  if (has("e")) dyaw -= STEP_YAW_RAD;

  if (dx === 0 && dy === 0 && dz === 0 && dyaw === 0) return null;
  return { type: "teleop", dx, dy, dz, dyaw, j: jawOpen ? 1.0 : -1.0 };
}

export function jawToggleMessage(jawOpenAfterToggle: boolean): TeleopPayload {
  return { type: "teleop", dx: 0, dy: 0, dz: 0, dyaw: 0,
           j: jawOpenAfterToggle ? 1.0 : -1.0 };
}

export function respectsClamps(p: TeleopPayload): boolean {
  return Math.abs(p.dx) <= STEP_M && Math.abs(p.dy) <= STEP_M
    && Math.abs(p.dz) <= STEP_M && Math.abs(p.dyaw) <= STEP_YAW_RAD
    && Math.abs(p.j) <= 1.0;
}
