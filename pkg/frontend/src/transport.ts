// WebSocket transport with automatic reconnection. The server owns all
// state; on reconnect the first inbound state message restores the display.

import { ClientMsg, ServerMsg, parseServerMsg } from "./protocol.js";

export interface Transport {
  send(msg: ClientMsg): void;
  close(): void;
}

export function connect(url: string,
                        onMsg: (msg: ServerMsg) => void,
                        onStatus: (s: "connecting" | "connected" | "disconnected") => void,
                        retryMs = 1000): Transport {
  let ws: WebSocket | null = null;
  let closed = false;
  let timer: ReturnType<typeof setTimeout> | null = null;

  const open = () => {
    if (closed) return;
    onStatus("connecting");
    ws = new WebSocket(url);
    ws.onopen = () => onStatus("connected");
    ws.onmessage = (ev) => {
      const msg = parseServerMsg(String(ev.data));
      if (msg) onMsg(msg);
    };
    ws.onclose = () => {
      onStatus("disconnected");
      if (!closed) timer = setTimeout(open, retryMs);
    };
    ws.onerror = () => ws?.close();
  };
  open();

  return {
    send(msg: ClientMsg) {
      if (ws && ws.readyState === WebSocket.OPEN) ws.send(JSON.stringify(msg));
    },
    close() {
      closed = true;
      if (timer) clearTimeout(timer);
      ws?.close();
    },
  };
}
