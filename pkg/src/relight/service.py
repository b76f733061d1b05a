"""Live frame-streaming relighting server.

One mutable Session guarded by a single writer lock; every control message
bumps its version counter.  A lone render worker always renders the newest
snapshot, so frames from stale in-flight states are dropped rather than
queued (latest-state-wins), and each delivered frame carries the version it
was rendered from as its frame_id.
"""

from __future__ import annotations

import asyncio
import time
from collections import deque
from dataclasses import dataclass

import numpy as np
import websockets

from .camera import Camera
from .protocol import (ProtocolError, decode_hello, encode_ack, encode_error,
                       encode_frame, encode_hello, parse_control, quantize_u8,
                       PROTOCOL_VERSION)
from .render import RenderOptions, default_decoder, render, render_analytic_relight
from .sh import as_sh


@dataclass(frozen=True)
class Snapshot:
    """Immutable copy of the session state handed to the renderer."""

    version: int
    yaw: float
    pitch: float
    roll: float
    radius: float
    focal: float
    lighting: tuple
    size: int
    spp: int
    channel: str
    encoding: str


class Session:
    def __init__(self, dual, dec=None, *, size: int = 128, spp: int = 64,
                 yaw: float = 0.0, pitch: float = 0.0, roll: float = 0.0,
                 radius: float = 2.7, focal: float = 700.0, lighting=None,
                 channel: str = "rgb", encoding: str = "raw"):
        self.dual = dual
        self.dec = dec if dec is not None else default_decoder(
            dual.albedo.channels, dual.shading.channels)
        self.version = 0
        self.yaw, self.pitch, self.roll = yaw, pitch, roll
        self.radius, self.focal = radius, focal
        self.lighting = as_sh(lighting if lighting is not None else dual.lighting_tag)
        self.size, self.spp = size, spp
        self.channel, self.encoding = channel, encoding
        self.render_seconds: deque = deque(maxlen=120)

    def apply(self, msg: dict) -> int:
        """Mutate from a parsed control message; returns the new version."""
        kind = msg["type"]
        if kind == "set_camera":
            for key in ("yaw", "pitch", "roll", "radius", "focal"):
                if key in msg:
                    setattr(self, key, msg[key])
        elif kind == "set_lighting":
            self.lighting = as_sh(msg["sh"])
        elif kind == "set_opts":
            for key in ("size", "spp", "channel", "encoding"):
                if key in msg:
                    setattr(self, key, msg[key])
        else:
            raise ProtocolError(f"{kind} is not a state mutation")
        self.version += 1
        return self.version

    def snapshot(self) -> Snapshot:
        return Snapshot(version=self.version, yaw=self.yaw, pitch=self.pitch,
                        roll=self.roll, radius=self.radius, focal=self.focal,
                        lighting=tuple(self.lighting), size=self.size,
                        spp=self.spp, channel=self.channel, encoding=self.encoding)

    @property
    def fps(self) -> float:
        if not self.render_seconds:
            return 0.0
        return 1.0 / (sum(self.render_seconds) / len(self.render_seconds))


def render_snapshot(dual, dec, snap: Snapshot, renderer: str = "reference") -> np.ndarray:
    """u8 image for a snapshot; the offline oracle for every served frame."""
    cam = Camera(yaw=snap.yaw, pitch=snap.pitch, roll=snap.roll,
                 radius=snap.radius, focal=snap.focal, image_size=snap.size)
    opts = RenderOptions(samples_per_ray=snap.spp)
    light = np.asarray(snap.lighting)
    relit = not np.array_equal(light, dual.lighting_tag)
    if renderer == "fast":
        from .fast import render_fast
        out = render_fast(dual, dec, cam, opts, light=light if relit else None)
    elif renderer == "reference":
        if relit:
            out = render_analytic_relight(dual, dec, cam, light, opts)
        else:
            out = render(dual, dec, cam, opts)
    else:
        raise ValueError(f"unknown renderer {renderer!r}")
    image = {"rgb": out.rgb, "albedo": out.albedo, "shading": out.shading}[snap.channel]
    return quantize_u8(image)


class _Client:
    __slots__ = ("ws", "stream", "want")

    def __init__(self, ws):
        self.ws = ws
        self.stream = False
        self.want = None  # version whose frame this client still awaits


class Service:
    def __init__(self, dual, dec=None, *, host: str = "127.0.0.1", port: int = 0,
                 renderer: str = "reference", **session_kwargs):
        self.session = Session(dual, dec, **session_kwargs)
        self.host, self.port = host, port
        self.renderer = renderer
        self._clients: set[_Client] = set()
        self._dirty = asyncio.Event()
        self._lock = asyncio.Lock()
        self._last: tuple[int, bytes] | None = None
        self._server = None
        self._worker_task = None

    async def start(self) -> int:
        """Bind and begin serving; returns the actual port."""
        if self.renderer == "fast":
            from .fast import warmup
            await asyncio.get_running_loop().run_in_executor(None, warmup)
        self._server = await websockets.serve(self._handler, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        self._worker_task = asyncio.create_task(self._worker())
        self._dirty.set()  # render the initial state eagerly
        return self.port

    async def stop(self) -> None:
        if self._worker_task is not None:
            self._worker_task.cancel()
            try:
                await self._worker_task
            except asyncio.CancelledError:
                pass
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def serve_forever(self) -> None:
        await self.start()
        try:
            await asyncio.Future()
        finally:
            await self.stop()

    async def _handler(self, ws) -> None:
        await ws.send(encode_hello())
        try:
            first = await ws.recv()
            version = decode_hello(first)
            if version != PROTOCOL_VERSION:
                await ws.send(encode_error(
                    f"protocol version mismatch: server={PROTOCOL_VERSION}, client={version}"))
                await ws.close()
                return
        except ProtocolError as exc:
            await ws.send(encode_error(f"handshake failed: {exc}"))
            await ws.close()
            return
        except websockets.ConnectionClosed:
            return

        client = _Client(ws)
        self._clients.add(client)
        try:
            async for raw in ws:
                try:
                    msg = parse_control(raw)
                except ProtocolError as exc:
                    await ws.send(encode_error(str(exc)))
                    continue
                if msg["type"] == "stream":
                    client.stream = msg["on"]
                    await ws.send(encode_ack(self.session.version))
                elif msg["type"] == "request_frame":
                    async with self._lock:
                        version = self.session.version
                    await ws.send(encode_ack(version))
                    if self._last is not None and self._last[0] == version:
                        await ws.send(self._last[1])
                    else:
                        client.want = version
                        self._dirty.set()
                else:
                    async with self._lock:
                        version = self.session.apply(msg)
                    self._dirty.set()
                    await ws.send(encode_ack(version))
        except websockets.ConnectionClosed:
            pass
        finally:
            self._clients.discard(client)

    async def _worker(self) -> None:
        loop = asyncio.get_running_loop()
        while True:
            await self._dirty.wait()
            self._dirty.clear()
            if self._last is not None and self._last[0] == self.session.version:
                await self._deliver(*self._last)  # state unchanged, reuse the frame
                continue
            while True:
                async with self._lock:
                    snap = self.session.snapshot()
                started = time.perf_counter()
                image = await loop.run_in_executor(
                    None, render_snapshot, self.session.dual, self.session.dec,
                    snap, self.renderer)
                self.session.render_seconds.append(time.perf_counter() - started)
                if snap.version == self.session.version:
                    break  # else a control arrived mid-render: drop and redo
            frame = encode_frame(image, snap.version, snap.encoding)
            self._last = (snap.version, frame)
            await self._deliver(snap.version, frame)

    async def _deliver(self, version: int, frame: bytes) -> None:
        dead = []
        for client in list(self._clients):
            wanted = client.want is not None and version >= client.want
            if not (client.stream or wanted):
                continue
            try:
                await client.ws.send(frame)
            except websockets.ConnectionClosed:
                dead.append(client)
                continue
            if wanted:
                client.want = None
        for client in dead:
            self._clients.discard(client)
