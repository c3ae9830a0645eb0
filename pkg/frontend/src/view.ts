// Canvas and status rendering. Local click echoes are presentation only;
// every displayed fact comes from the client state fold.

import { ClientState } from "./state.js";

export interface ClickEcho {
  u: number;
  v: number;
  index: number;
}

export function renderFrames(canvas: HTMLCanvasElement, state: ClientState,
                             clicks: ClickEcho[]): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  const w = state.imageWidth;
  const h = state.imageHeight;
  if (canvas.width !== 2 * w || canvas.height !== h) {
    canvas.width = 2 * w;
    canvas.height = h;
  }
  if (state.displayed) {
    const { left, right } = state.displayed;
    ctx.putImageData(new ImageData(left.rgba, left.width, left.height), 0, 0);
    ctx.putImageData(new ImageData(right.rgba, right.width, right.height), w, 0);
  } else {
    ctx.fillStyle = "#111";
    ctx.fillRect(0, 0, canvas.width, canvas.height);
  }
  ctx.strokeStyle = "#333";
  ctx.beginPath();
  ctx.moveTo(w + 0.5, 0);
  ctx.lineTo(w + 0.5, h);
  ctx.stroke();

  if (state.mode === "calibrating") {
    ctx.fillStyle = "#ff4040";
    ctx.font = "10px monospace";
    for (const c of clicks) {
      ctx.beginPath();
      ctx.arc(c.u, c.v, 3, 0, 2 * Math.PI);
      ctx.fill();
      ctx.fillText(String(c.index), c.u + 5, c.v - 5);
    }
  }

  if (state.connection !== "connected") {
    banner(ctx, canvas, "DISCONNECTED - RETRYING", "#b02020");
  } else if (state.lastStep?.isSuccess) {
    banner(ctx, canvas, "SUCCESS - PEG TRANSFERRED", "#107020");
  } else if (state.episodeDone) {
    banner(ctx, canvas, "EPISODE OVER - PRESS RESET", "#806010");
  }
}

function banner(ctx: CanvasRenderingContext2D, canvas: HTMLCanvasElement,
                text: string, color: string): void {
  ctx.fillStyle = color;
  ctx.fillRect(0, 0, canvas.width, 28);
  ctx.fillStyle = "#fff";
  ctx.font = "16px monospace";
  ctx.fillText(text, 12, 19);
}

export function statusLine(state: ClientState): string {
  const parts = [
    `conn: ${state.connection}`,
    `mode: ${state.mode ?? "-"}`,
    `clicks: ${state.nClicks}/12`,
  ];
  if (state.calibrated) {
    const rms = state.lastRmsPx !== null ? state.lastRmsPx.toFixed(3) : "?";
    parts.push(`calibrated (rms ${rms} px)`);
  }
  if (state.calibrationWarning) parts.push(`warning: ${state.calibrationWarning}`);
  parts.push(`guidance: ${state.guidanceOn ? "on" : "off"}`);
  if (state.lastStep) {
    const d = state.lastStep.deviationM;
    parts.push(`reward ${state.lastStep.reward}`,
               `deviation ${d === null ? "-" : (d * 1000).toFixed(2) + " mm"}`,
               state.lastStep.isSuccess ? "SUCCESS" : (state.lastStep.done ? "done" : "..."));
  }
  if (state.lastError) parts.push(`error ${state.lastError.code}: ${state.lastError.detail}`);
  return parts.join(" | ");
}
