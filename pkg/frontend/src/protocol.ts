// Wire protocol types. The browser transport carries one JSON message per
// WebSocket text frame; these mirror the server's documented schema exactly.

export type ClientMsg =
  | { type: "click"; u: number; v: number }
  | { type: "solve_calibration" }
  | { type: "teleop"; dx: number; dy: number; dz: number; dyaw: number; j: number }
  | { type: "set_mode"; mode: Mode }
  | { type: "toggle_guidance"; on: boolean }
  | { type: "reset"; range_mode?: string; seed?: number };

export type Mode = "calibrating" | "training" | "replay";

export interface StateMsg {
  type: "state";
  mode: Mode;
  guidance_on: boolean;
  n_clicks: number;
  calibrated: boolean;
  policy_loaded: boolean;
  width: number;
  height: number;
  timestep: number;
  done: boolean;
  range_mode: string;
  episode_seed: number;
}

export interface FrameMsg {
  type: "frame";
  eye: "left" | "right";
  tick: number;
  encoding: "ppm-base64";
  data: string;
}

export interface CalibrationMsg {
  type: "calibration";
  n_clicks: number;
  solved: boolean;
  rms_error_px?: number;
  warning?: string;
}

export interface StepMsg {
  type: "step";
  reward: number;
  done: boolean;
  is_success: boolean;
  deviation_m: number | null;
}

export interface ErrorMsg {
  type: "error";
  code: string;
  detail: string;
}

export type ServerMsg = StateMsg | FrameMsg | CalibrationMsg | StepMsg | ErrorMsg;

export function parseServerMsg(raw: string): ServerMsg | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const t = (msg as { type?: unknown }).type;
  if (t === "state" || t === "frame" || t === "calibration" || t === "step" || t === "error") {
    return msg as ServerMsg;
  }
  return null;
}
