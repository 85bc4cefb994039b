"""FMV1 feature-server wire protocol: framing and tensor encoding.

Frame layout, little-endian throughout::

    u32  total length of everything after this field
    4B   magic "FMV1"
    u8   message type
    ...  payload

Tensor payload: u8 ndim, u32 * ndim dims, f32 data row-major.
HELLO_RESP payload: u32 latent_dim, u32 protocol_version.
ERROR payload: u16 code, u16 message length, UTF-8 message.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import RemoteError

MAGIC = b"FMV1"
PROTOCOL_VERSION = 1

FORWARD_REQ = 0x01
FORWARD_RESP = 0x02
VJP_REQ = 0x03
VJP_RESP = 0x04
HELLO_REQ = 0x10
HELLO_RESP = 0x11
ERROR = 0x7F

ERR_MALFORMED = 0x01
ERR_SHAPE = 0x02
ERR_MODEL = 0x03


def encode_frame(msg_type: int, payload: bytes = b"") -> bytes:
    body = MAGIC + struct.pack("<B", msg_type) + payload
    return struct.pack("<I", len(body)) + body


def decode_frame(read_exact) -> tuple[int, bytes]:
    """Read one frame via `read_exact(n) -> bytes`; returns (type, payload)."""
    (length,) = struct.unpack("<I", read_exact(4))
    if length < 5:
        raise RemoteError(f"frame too short: {length} bytes")
    body = read_exact(length)
    if body[:4] != MAGIC:
        raise RemoteError(f"bad magic: {body[:4]!r}")
    return body[4], body[5:]


def encode_tensor(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dims = arr.shape
    head = struct.pack("<B", len(dims)) + struct.pack(f"<{len(dims)}I", *dims)
    return head + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def decode_tensor(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if offset + 1 > len(buf):
        raise RemoteError("truncated tensor header")
    ndim = buf[offset]
    offset += 1
    if offset + 4 * ndim > len(buf):
        raise RemoteError("truncated tensor dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = 1
    for d in dims:
        count *= d
    end = offset + 4 * count
    if end > len(buf):
        raise RemoteError("truncated tensor data")
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=offset)
    return data.reshape(dims).astype(np.float64), end


def encode_hello_resp(latent_dim: int, version: int = PROTOCOL_VERSION) -> bytes:
    return struct.pack("<II", latent_dim, version)


def decode_hello_resp(payload: bytes) -> tuple[int, int]:
    if len(payload) != 8:
        raise RemoteError(f"bad HELLO_RESP payload length: {len(payload)}")
    return struct.unpack("<II", payload)


def encode_error(code: int, message: str) -> bytes:
    raw = message.encode("utf-8")
    return struct.pack("<HH", code, len(raw)) + raw


def decode_error(payload: bytes) -> tuple[int, str]:
    if len(payload) < 4:
        raise RemoteError("truncated ERROR payload")
    code, n = struct.unpack_from("<HH", payload, 0)
    return code, payload[4:4 + n].decode("utf-8", "replace")
