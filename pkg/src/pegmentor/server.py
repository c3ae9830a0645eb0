"""Wire transport for the mentor service.

Two transports speak the same JSON message protocol:
- raw TCP with a 4-byte big-endian length prefix per message (headless
  clients and tests), and
- WebSocket text frames (the browser console), one JSON message per frame.

Each connection owns one session. A per-session 30 Hz tick task renders and
pushes stereo frames; when the client's send buffer backs up, frames are
dropped rather than queued so the view stays fresh.
"""

from __future__ import annotations

import asyncio
import json
import logging
import socket
import struct

from . import service as service_mod

logger = logging.getLogger(__name__)

TICK_HZ = 30.0
MAX_MESSAGE = 16 * 1024 * 1024
DROP_THRESHOLD = 4 * 1024 * 1024  # unsent bytes beyond this: skip the frame


def encode_message(msg: dict) -> bytes:
    payload = json.dumps(msg, sort_keys=True).encode("utf-8")
    return struct.pack(">I", len(payload)) + payload


async def _read_message(reader: asyncio.StreamReader) -> dict | None:
    try:
        head = await reader.readexactly(4)
    except (asyncio.IncompleteReadError, ConnectionResetError):
        return None
    (length,) = struct.unpack(">I", head)
    if length > MAX_MESSAGE:
        raise ValueError(f"message of {length} bytes exceeds the {MAX_MESSAGE} limit")
    try:
        payload = await reader.readexactly(length)
    except (asyncio.IncompleteReadError, ConnectionResetError):
        return None
    try:
        return json.loads(payload)
    except json.JSONDecodeError:
        return {"type": "__unparseable__"}


class MentorServer:
    def __init__(self, svc: service_mod.MentorService, host: str = "127.0.0.1",
                 port: int = 8642, ws_port: int | None = None, tick_hz: float = TICK_HZ):
        self.svc = svc
        self.host = host
        self.port = port
        self.ws_port = ws_port
        self.tick_hz = tick_hz
        self._server: asyncio.AbstractServer | None = None
        self._ws_server = None
        self._tasks: set[asyncio.Task] = set()

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle_conn, self.host, self.port)
        logger.info("tcp listening on %s:%d", self.host, self.port)
        if self.ws_port is not None:
            import websockets

            self._ws_server = await websockets.serve(self._handle_ws, self.host, self.ws_port,
                                                     max_size=MAX_MESSAGE)
            logger.info("websocket listening on %s:%d", self.host, self.ws_port)

    async def stop(self) -> None:
        for task in list(self._tasks):
            task.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._ws_server is not None:
            self._ws_server.close()
            await self._ws_server.wait_closed()
        logger.info("server stopped, %d sessions flushed", len(self.svc.sessions))

    async def serve_forever(self) -> None:
        await self.start()
        try:
            await asyncio.Event().wait()
        except asyncio.CancelledError:
            pass
        finally:
            await self.stop()

    def _track(self, task: asyncio.Task) -> None:
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    # -- raw TCP ---------------------------------------------------------------

    async def _handle_conn(self, reader: asyncio.StreamReader,
                           writer: asyncio.StreamWriter) -> None:
        session = self.svc.create_session()
        logger.info("session %s connected (tcp)", session.id)
        writer.write(encode_message(session.state_message()))
        write_lock = asyncio.Lock()
        session_lock = asyncio.Lock()  # one session mutation at a time

        async def send(msg: dict, droppable: bool = False) -> None:
            if droppable and writer.transport.get_write_buffer_size() > DROP_THRESHOLD:
                return
            async with write_lock:
                writer.write(encode_message(msg))
                await writer.drain()

        tick_task = asyncio.create_task(self._tick_loop(session, session_lock, send))
        self._track(tick_task)
        try:
            while True:
                msg = await _read_message(reader)
                if msg is None:
                    break
                async with session_lock:
                    outs = self.svc.handle_message(session, msg)
                for out in outs:
                    await send(out)
        finally:
            tick_task.cancel()
            self.svc.close_session(session)
            writer.close()
            logger.info("session %s closed", session.id)

    async def _tick_loop(self, session, session_lock: asyncio.Lock, send) -> None:
        interval = 1.0 / self.tick_hz
        try:
            while True:
                async with session_lock:
                    frames = await asyncio.to_thread(session.tick)
                for f in frames:
                    await send(f, droppable=True)
                await asyncio.sleep(interval)
        except asyncio.CancelledError:
            pass

    # -- websocket ---------------------------------------------------------------

    async def _handle_ws(self, ws) -> None:
        session = self.svc.create_session()
        logger.info("session %s connected (ws)", session.id)
        await ws.send(json.dumps(session.state_message(), sort_keys=True))
        session_lock = asyncio.Lock()

        async def send(msg: dict, droppable: bool = False) -> None:
            await ws.send(json.dumps(msg, sort_keys=True))

        tick_task = asyncio.create_task(self._tick_loop(session, session_lock, send))
        self._track(tick_task)
        try:
            async for raw in ws:
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    msg = {"type": "__unparseable__"}
                async with session_lock:
                    outs = self.svc.handle_message(session, msg)
                for out in outs:
                    await send(out)
        except Exception:
            pass
        finally:
            tick_task.cancel()
            self.svc.close_session(session)
            logger.info("session %s closed", session.id)


class MentorClient:
    """Blocking TCP client for tests and scripted protocol flows."""

    def __init__(self, host: str = "127.0.0.1", port: int = 8642, timeout: float = 30.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)

    def send(self, msg: dict) -> None:
        self.sock.sendall(encode_message(msg))

    def recv(self) -> dict:
        head = self._read_exact(4)
        (length,) = struct.unpack(">I", head)
        return json.loads(self._read_exact(length))

    def recv_until(self, mtype: str, limit: int = 500) -> dict:
        """Read messages until one of the given type arrives (frames stream
        continuously, so callers skip past them)."""
        for _ in range(limit):
            msg = self.recv()
            if msg.get("type") == mtype:
                return msg
        raise TimeoutError(f"no {mtype!r} message within {limit} messages")

    def _read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self.sock.recv(n - len(buf))
            if not chunk:
                raise ConnectionError("server closed the connection")
            buf += chunk
        return buf

    def close(self) -> None:
        self.sock.close()
