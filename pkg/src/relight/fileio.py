"""Binary containers shared by the tri-plane, env-map and network-weight files.

Layout: 4-byte ASCII magic, u32 LE version, a fixed number of u32 LE header
fields, then a little-endian float32 payload whose length the header implies.
"""

from __future__ import annotations

import struct

import numpy as np

FORMAT_VERSION = 1


class FileFormatError(ValueError):
    """Base for container parsing failures."""


class BadMagicError(FileFormatError):
    pass


class VersionMismatchError(FileFormatError):
    pass


class TruncatedPayloadError(FileFormatError):
    pass


def write_container(path, magic: bytes, header: tuple[int, ...], payload: np.ndarray) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    data = np.ascontiguousarray(payload, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack(f"<{len(header)}I", *header))
        fh.write(data.tobytes())


def read_container(path, magic: bytes, n_header: int) -> tuple[tuple[int, ...], np.ndarray]:
    """Returns (header fields, flat float32 payload). Payload length unchecked here."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != magic:
        raise BadMagicError(f"bad magic: expected {magic!r}, got {blob[:4]!r}")
    head_end = 4 + 4 * (1 + n_header)
    if len(blob) < head_end:
        raise TruncatedPayloadError("file shorter than header")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != FORMAT_VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {FORMAT_VERSION}")
    header = struct.unpack_from(f"<{n_header}I", blob, 8)
    payload = np.frombuffer(blob[head_end:], dtype="<f4")
    return header, payload


def expect_payload(payload: np.ndarray, n_expected: int) -> np.ndarray:
    if payload.size < n_expected:
        raise TruncatedPayloadError(f"payload has {payload.size} floats, expected {n_expected}")
    if payload.size > n_expected:
        raise FileFormatError(f"payload has {payload.size} floats, expected {n_expected}")
    return payload
