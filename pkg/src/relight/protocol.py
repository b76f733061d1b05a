"""Wire format shared by the streaming server and its clients.

Text messages are JSON controls and replies; frames are binary with a
16-byte header of four u32 LE fields (width, height, channels, frame_id)
followed by the payload: raw u8 bytes or a PNG, per the session's encoding.
The handshake is a single binary u32 LE protocol version.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np
from PIL import Image

PROTOCOL_VERSION = 1
FRAME_HEADER = struct.Struct("<4I")
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

VALID_CHANNELS = ("rgb", "albedo", "shading")
VALID_ENCODINGS = ("raw", "png")

# allowed keys per control type; all are optional except where noted
_CONTROL_FIELDS = {
    "set_camera": {"yaw", "pitch", "roll", "radius", "focal"},
    "set_lighting": {"sh"},
    "set_opts": {"size", "spp", "channel", "encoding"},
    "request_frame": set(),
    "stream": {"on"},
}


class ProtocolError(ValueError):
    """Malformed or out-of-contract wire message."""


def encode_hello() -> bytes:
    return struct.pack("<I", PROTOCOL_VERSION)


def decode_hello(data: bytes) -> int:
    if not isinstance(data, (bytes, bytearray)) or len(data) != 4:
        raise ProtocolError("hello must be exactly 4 bytes")
    return struct.unpack("<I", bytes(data))[0]


def _require_number(msg, key, lo=None, hi=None):
    v = msg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError(f"{key} must be a number")
    v = float(v)
    if not np.isfinite(v):
        raise ProtocolError(f"{key} must be finite")
    if lo is not None and v < lo or hi is not None and v > hi:
        raise ProtocolError(f"{key}={v} outside [{lo}, {hi}]")
    return v


def parse_control(text) -> dict:
    """Validated control message as a plain dict; raises ProtocolError."""
    if isinstance(text, (bytes, bytearray)):
        raise ProtocolError("control messages must be text, not binary")
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError("control message must be an object with a 'type'")
    kind = msg["type"]
    if kind not in _CONTROL_FIELDS:
        raise ProtocolError(f"unknown control type {kind!r}")
    extra = set(msg) - _CONTROL_FIELDS[kind] - {"type"}
    if extra:
        raise ProtocolError(f"unexpected fields for {kind}: {sorted(extra)}")

    out = {"type": kind}
    if kind == "set_camera":
        if len(msg) == 1:
            raise ProtocolError("set_camera needs at least one of yaw/pitch/roll/radius/focal")
        for key in ("yaw", "pitch", "roll"):
            if key in msg:
                out[key] = _require_number(msg, key, -10.0, 10.0)
        if "radius" in msg:
            out["radius"] = _require_number(msg, "radius", 1.2, 100.0)
        if "focal" in msg:
            out["focal"] = _require_number(msg, "focal", 1.0, 10000.0)
    elif kind == "set_lighting":
        sh = msg.get("sh")
        if not isinstance(sh, list) or len(sh) != 9:
            raise ProtocolError("sh must be a list of 9 numbers")
        coeffs = []
        for i, v in enumerate(sh):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(float(v)):
                raise ProtocolError(f"sh[{i}] must be a finite number")
            coeffs.append(float(v))
        out["sh"] = coeffs
    elif kind == "set_opts":
        if len(msg) == 1:
            raise ProtocolError("set_opts needs at least one of size/spp/channel/encoding")
        if "size" in msg:
            size = msg["size"]
            if not isinstance(size, int) or isinstance(size, bool) or not 8 <= size <= 1024:
                raise ProtocolError("size must be an integer in [8, 1024]")
            out["size"] = size
        if "spp" in msg:
            spp = msg["spp"]
            if not isinstance(spp, int) or isinstance(spp, bool) or not 1 <= spp <= 1024:
                raise ProtocolError("spp must be an integer in [1, 1024]")
            out["spp"] = spp
        if "channel" in msg:
            if msg["channel"] not in VALID_CHANNELS:
                raise ProtocolError(f"channel must be one of {VALID_CHANNELS}")
            out["channel"] = msg["channel"]
        if "encoding" in msg:
            if msg["encoding"] not in VALID_ENCODINGS:
                raise ProtocolError(f"encoding must be one of {VALID_ENCODINGS}")
            out["encoding"] = msg["encoding"]
    elif kind == "stream":
        if not isinstance(msg.get("on"), bool):
            raise ProtocolError("stream needs a boolean 'on'")
        out["on"] = msg["on"]
    return out


def encode_ack(frame_id: int) -> str:
    return json.dumps({"type": "ack", "frame_id": int(frame_id)})


def encode_error(msg: str) -> str:
    return json.dumps({"type": "error", "msg": str(msg)})


def parse_reply(text) -> dict:
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"not valid JSON: {exc}") from exc
    if not isinstance(msg, dict) or msg.get("type") not in ("ack", "error"):
        raise ProtocolError("reply must be an ack or error object")
    if msg["type"] == "ack" and not isinstance(msg.get("frame_id"), int):
        raise ProtocolError("ack needs an integer frame_id")
    if msg["type"] == "error" and not isinstance(msg.get("msg"), str):
        raise ProtocolError("error needs a message string")
    return msg


def quantize_u8(image: np.ndarray) -> np.ndarray:
    """Float [0,1] image to u8, (H,W) maps to (H,W,1)."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[..., None]
    if img.ndim != 3:
        raise ValueError(f"image must be (H,W[,C]), got {img.shape}")
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def encode_frame(image: np.ndarray, frame_id: int, mode: str = "raw") -> bytes:
    """Frame message bytes from a u8 (H,W,C) image."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError("encode_frame expects a u8 image; quantize first")
    if img.ndim == 2:
        img = img[..., None]
    h, w, c = img.shape
    header = FRAME_HEADER.pack(w, h, c, int(frame_id))
    if mode == "raw":
        return header + img.tobytes()
    if mode == "png":
        buf = io.BytesIO()
        pil = Image.fromarray(img[..., 0] if c == 1 else img,
                              mode="L" if c == 1 else "RGB")
        pil.save(buf, format="PNG")
        return header + buf.getvalue()
    raise ValueError(f"unknown frame mode {mode!r}")


def decode_frame(data: bytes) -> tuple[dict, np.ndarray]:
    """(header dict, u8 (H,W,C) array); payload kind sniffed from bytes."""
    if len(data) < FRAME_HEADER.size:
        raise ProtocolError("frame shorter than its header")
    w, h, c, frame_id = FRAME_HEADER.unpack_from(data)
    header = {"width": w, "height": h, "channels": c, "frame_id": frame_id}
    payload = data[FRAME_HEADER.size:]
    if payload[:8] == PNG_SIGNATURE:
        img = np.asarray(Image.open(io.BytesIO(payload)))
        if img.ndim == 2:
            img = img[..., None]
    else:
        if len(payload) != w * h * c:
            raise ProtocolError(f"raw payload has {len(payload)} bytes, "
                                f"expected {w * h * c}")
        img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, c)
    if img.shape != (h, w, c):
        raise ProtocolError(f"payload decodes to {img.shape}, header says {(h, w, c)}")
    return header, img
