// Console wiring: one WebSocket, one state fold, one render loop. Teleop
// sends at most one message per rendered animation frame.

import { applyServerMsg, canvasToImage, ClientState, initialState,
         setConnection } from "./state.js";
import { buildTeleop, jawToggleMessage } from "./teleop.js";
import { connect, Transport } from "./transport.js";
import { ClickEcho, renderFrames, statusLine } from "./view.js";

let state: ClientState = initialState();
let transport: Transport;
const clickEchoes: ClickEcho[] = [];
const pressed = new Set<string>();
let shift = false;
let jawOpen = true;
let jawDirty = false;

function qs<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function start(): void {
  const canvas = qs<HTMLCanvasElement>("stereo");
  const status = qs<HTMLDivElement>("status");
  const address = qs<HTMLInputElement>("address");
  const seedInput = qs<HTMLInputElement>("seed");
  const rangeSelect = qs<HTMLSelectElement>("range");

  const url = new URLSearchParams(location.search).get("server")
    ?? `ws://${location.hostname || "127.0.0.1"}:8643`;
  address.value = url;

  transport = connect(url, (msg) => {
    const before = state.nClicks;
    state = applyServerMsg(state, msg);
    if (msg.type === "state" && state.nClicks === 0 && before !== 0) {
      clickEchoes.length = 0; // server discarded clicks; drop local echoes
    }
  }, (s) => {
    state = setConnection(state, s);
  });

  canvas.addEventListener("click", (ev) => {
    if (state.mode !== "calibrating") return;
    const rect = canvas.getBoundingClientRect();
    // only the left pane takes calibration clicks
    const paneW = rect.width / 2;
    const x = ev.clientX - rect.left;
    const y = ev.clientY - rect.top;
    if (x >= paneW) return;
    const hit = canvasToImage(x, y, paneW, rect.height, state.imageWidth, state.imageHeight);
    if (!hit) return;
    clickEchoes.push({ u: hit.u, v: hit.v, index: clickEchoes.length });
    transport.send({ type: "click", u: hit.u, v: hit.v });
  });

  window.addEventListener("keydown", (ev) => {
    if (ev.key === " ") {
      jawOpen = !jawOpen;
      jawDirty = true;
      ev.preventDefault();
      return;
    }
    pressed.add(ev.key.toLowerCase());
    shift = ev.shiftKey;
  });
  window.addEventListener("keyup", (ev) => {
    pressed.delete(ev.key.toLowerCase());
    shift = ev.shiftKey;
  });

  qs<HTMLButtonElement>("mode-calibrate").onclick =
    () => transport.send({ type: "set_mode", mode: "calibrating" });
  qs<HTMLButtonElement>("mode-training").onclick =
    () => transport.send({ type: "set_mode", mode: "training" });
  qs<HTMLButtonElement>("mode-replay").onclick =
    () => transport.send({ type: "set_mode", mode: "replay" });
  qs<HTMLButtonElement>("solve").onclick =
    () => transport.send({ type: "solve_calibration" });
  qs<HTMLButtonElement>("guidance").onclick =
    () => transport.send({ type: "toggle_guidance", on: !state.guidanceOn });
  qs<HTMLButtonElement>("reset").onclick = () => {
    const seed = parseInt(seedInput.value, 10);
    const msg: { type: "reset"; range_mode?: string; seed?: number } = { type: "reset" };
    if (!Number.isNaN(seed)) msg.seed = seed;
    if (rangeSelect.value !== "any") msg.range_mode = rangeSelect.value;
    transport.send(msg);
  };

  const loop = () => {
    if (state.mode === "training" && !state.episodeDone) {
      const teleop = buildTeleop({ pressed, shift }, jawOpen);
      if (teleop) {
        transport.send(teleop); // one per rendered frame at most
        jawDirty = false;
      } else if (jawDirty) {
        transport.send(jawToggleMessage(jawOpen));
        jawDirty = false;
      }
    }
    renderFrames(canvas, state, clickEchoes);
    status.textContent = statusLine(state);
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
}

window.addEventListener("DOMContentLoaded", start);
