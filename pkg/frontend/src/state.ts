// Client state is a pure fold over inbound server messages: nothing here is
// invented locally, so clearing it and replaying the stream reproduces the
// same display. Stereo frames are paired by their tick tag and a pane never
// shows two different ticks at once.

import { DecodedFrame, decodePpmBase64 } from "./ppm.js";
import { ServerMsg, Mode } from "./protocol.js";

export interface StepFeedback {
  reward: number;
  done: boolean;
  isSuccess: boolean;
  deviationM: number | null;
}

export interface StereoPair {
  tick: number;
  left: DecodedFrame;
  right: DecodedFrame;
}

export interface ClientState {
  connection: "connecting" | "connected" | "disconnected";
  mode: Mode | null;
  nClicks: number;
  calibrated: boolean;
  lastRmsPx: number | null;
  calibrationWarning: string | null;
  guidanceOn: boolean;
  policyLoaded: boolean;
  imageWidth: number;
  imageHeight: number;
  timestep: number;
  episodeDone: boolean;
  rangeMode: string;
  lastStep: StepFeedback | null;
  lastError: { code: string; detail: string } | null;
  pendingLeft: { tick: number; frame: DecodedFrame } | null;
  pendingRight: { tick: number; frame: DecodedFrame } | null;
  displayed: StereoPair | null;
  framesShown: number;
}

export function initialState(): ClientState {
  return {
    connection: "connecting",
    mode: null,
    nClicks: 0,
    calibrated: false,
    lastRmsPx: null,
    calibrationWarning: null,
    guidanceOn: false,
    policyLoaded: false,
    imageWidth: 640,
    imageHeight: 480,
    timestep: 0,
    episodeDone: false,
    rangeMode: "any",
    lastStep: null,
    lastError: null,
    pendingLeft: null,
    pendingRight: null,
    displayed: null,
    framesShown: 0,
  };
}

export function applyServerMsg(s: ClientState, msg: ServerMsg): ClientState {
  switch (msg.type) {
    case "state":
      return {
        ...s,
        mode: msg.mode,
        guidanceOn: msg.guidance_on,
        nClicks: msg.n_clicks,
        calibrated: msg.calibrated,
        policyLoaded: msg.policy_loaded,
        imageWidth: msg.width,
        imageHeight: msg.height,
        timestep: msg.timestep,
        episodeDone: msg.done,
        rangeMode: msg.range_mode,
        lastError: null,
      };
    case "calibration": {
      return {
        ...s,
        nClicks: msg.n_clicks,
        calibrated: s.calibrated || msg.solved,
        lastRmsPx: msg.solved && msg.rms_error_px !== undefined ? msg.rms_error_px : s.lastRmsPx,
        calibrationWarning: msg.warning ?? null,
        lastError: null,
      };
    }
    case "step":
      return {
        ...s,
        timestep: s.timestep + 1,
        episodeDone: msg.done,
        lastStep: {
          reward: msg.reward,
          done: msg.done,
          isSuccess: msg.is_success,
          deviationM: msg.deviation_m,
        },
        lastError: null,
      };
    case "error":
      return { ...s, lastError: { code: msg.code, detail: msg.detail } };
    case "frame":
      return applyFrame(s, msg.eye, msg.tick, msg.data);
  }
}

function applyFrame(s: ClientState, eye: "left" | "right", tick: number,
                    data: string): ClientState {
  let frame: DecodedFrame;
  try {
    frame = decodePpmBase64(data);
  } catch {
    return s; // a torn frame never reaches the display
  }
  const next: ClientState = { ...s };
  if (eye === "left") next.pendingLeft = { tick, frame };
  else next.pendingRight = { tick, frame };

  const l = next.pendingLeft;
  const r = next.pendingRight;
  if (l && r) {
    if (l.tick === r.tick) {
      next.displayed = { tick: l.tick, left: l.frame, right: r.frame };
      next.framesShown = s.framesShown + 1;
      next.pendingLeft = null;
      next.pendingRight = null;
    } else {
      // mismatched pair: drop the stale eye, keep the newer one
      if (l.tick < r.tick) next.pendingLeft = null;
      else next.pendingRight = null;
    }
  }
  return next;
}

export function setConnection(s: ClientState,
                              connection: ClientState["connection"]): ClientState {
  return { ...s, connection };
}

// Canvas hit -> image coordinates; null when the click falls outside the
// displayed image rectangle.
export function canvasToImage(offsetX: number, offsetY: number,
                              clientW: number, clientH: number,
                              imgW: number, imgH: number): { u: number; v: number } | null {
  if (clientW <= 0 || clientH <= 0) return null;
  const u = (offsetX * imgW) / clientW;
  const v = (offsetY * imgH) / clientH;
  if (u < 0 || v < 0 || u >= imgW || v >= imgH) return null;
  return { u, v };
}
