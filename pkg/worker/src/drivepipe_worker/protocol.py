"""Wire protocol, implemented fresh from the documented format.

The worker deliberately does not import the pipeline package: speaking the
protocol from its published description is the compatibility guarantee, and
the test suite cross-checks these bytes against the pipeline's codec whenever
that package happens to be installed.

Envelope: magic ``DRV1``, version 0x01, message-type byte, u32 big-endian
payload length (16 MiB cap), payload.  Style requests carry a frame and a
condition map as length-prefixed sub-encodings, then seed u64, steps u16,
strength f32, style id (u8 length + UTF-8).
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"DRV1"
VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024

MSG_STYLE_REQUEST = 3
MSG_STYLE_RESULT = 4
MSG_ERROR = 8

ERR_WORKER = 3

_VALID_TYPES = frozenset(range(1, 9))


class ProtocolError(ValueError):
    def __init__(self, category: str, detail: str = ""):
        super().__init__(f"{category}: {detail}" if detail else category)
        self.category = category


@dataclass(frozen=True)
class StyleJob:
    """A decoded stylize request, pixel planes already as arrays."""

    frame_id: int
    ts_ns: int
    source_id: str
    rgb: np.ndarray  # (h, w, 3) uint8
    condition: np.ndarray  # (h, w) uint8, 255 marks pixels to keep verbatim
    seed: int
    steps: int
    strength: float
    style_id: str


@dataclass(frozen=True)
class JobTimings:
    encode_ns: int
    inference_ns: int
    decode_ns: int
    total_ns: int


def frame_envelope_size(width: int, height: int) -> int:
    return 10 + 8 + 8 + 2 + 2 + 1 + 1 + width * height * 3


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ProtocolError("truncated payload", f"need {n} at {self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, n: int) -> str:
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("bad string", str(exc)) from None


def encode_envelope(msg_type: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise ValueError("payload exceeds 16 MiB cap")
    return MAGIC + bytes((VERSION, msg_type)) + struct.pack(">I", len(payload)) + payload


def read_envelope(sock: socket.socket) -> tuple[int, bytes]:
    header = _read_exact(sock, 10)
    if header[:4] != MAGIC:
        raise ProtocolError("bad magic", repr(header[:4]))
    if header[4] != VERSION:
        raise ProtocolError("bad version", str(header[4]))
    msg_type = header[5]
    if msg_type not in _VALID_TYPES:
        raise ProtocolError("unknown type", str(msg_type))
    (length,) = struct.unpack_from(">I", header, 6)
    if length > MAX_PAYLOAD:
        raise ProtocolError("oversize", str(length))
    return msg_type, _read_exact(sock, length) if length else b""


def _read_exact(sock: socket.socket, n: int) -> bytes:
    parts = []
    left = n
    while left:
        chunk = sock.recv(left)
        if not chunk:
            raise ConnectionError("peer closed")
        parts.append(chunk)
        left -= len(chunk)
    return b"".join(parts)


def _decode_frame_fields(buf: bytes):
    c = _Cursor(buf)
    frame_id, ts_ns, width, height, fmt = c.unpack(">QQHHB")
    (src_len,) = c.unpack(">B")
    source_id = c.text(src_len)
    pixels = c.buf[c.pos :]
    channels = 3 if fmt == 0 else 1
    if len(pixels) != width * height * channels:
        raise ProtocolError("invalid frame", f"{len(pixels)} pixel bytes for {width}x{height}")
    return frame_id, ts_ns, width, height, fmt, source_id, pixels


def decode_style_request(payload: bytes) -> StyleJob:
    c = _Cursor(payload)
    (frame_len,) = c.unpack(">I")
    frame_id, ts_ns, width, height, fmt, source_id, pixels = _decode_frame_fields(
        c.take(frame_len)
    )
    if fmt != 0:
        raise ProtocolError("invalid frame", "stylize requests must carry RGB8 frames")
    (cond_len,) = c.unpack(">I")
    cond_buf = _Cursor(c.take(cond_len))
    cond_id, cond_w, cond_h = cond_buf.unpack(">QHH")
    cond_pixels = cond_buf.buf[cond_buf.pos :]
    if (cond_w, cond_h) != (width, height) or cond_id != frame_id:
        raise ProtocolError("invalid condition map", "condition does not match frame")
    if len(cond_pixels) != width * height:
        raise ProtocolError("invalid condition map", f"{len(cond_pixels)} bytes")
    seed, steps = c.unpack(">QH")
    (strength,) = c.unpack(">f")
    (style_len,) = c.unpack(">B")
    style_id = c.text(style_len)
    if c.pos != len(payload):
        raise ProtocolError("trailing bytes", f"{len(payload) - c.pos} left")
    if steps < 1:
        raise ProtocolError("invalid style request", "steps must be >= 1")
    if not 0.0 <= strength <= 1.0:
        raise ProtocolError("invalid style request", f"strength {strength}")
    rgb = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, 3)
    condition = np.frombuffer(cond_pixels, dtype=np.uint8).reshape(height, width)
    return StyleJob(
        frame_id=frame_id,
        ts_ns=ts_ns,
        source_id=source_id,
        rgb=rgb,
        condition=condition,
        seed=seed,
        steps=steps,
        strength=strength,
        style_id=style_id,
    )


def encode_style_result(
    job: StyleJob, rgb: np.ndarray, timings: JobTimings, worker_id: str
) -> bytes:
    h, w = rgb.shape[:2]
    src = job.source_id.encode("utf-8")
    frame = (
        struct.pack(">QQHHB", job.frame_id, job.ts_ns, w, h, 0)
        + bytes((len(src),))
        + src
        + rgb.astype(np.uint8).tobytes()
    )
    wid = worker_id.encode("utf-8")
    return (
        struct.pack(">I", len(frame))
        + frame
        + struct.pack(
            ">QQQQ", timings.encode_ns, timings.inference_ns, timings.decode_ns, timings.total_ns
        )
        + bytes((len(wid),))
        + wid
    )


def decode_style_result(payload: bytes):
    """(frame fields, timings, worker_id) of a result payload, for the tests."""
    c = _Cursor(payload)
    (frame_len,) = c.unpack(">I")
    fields = _decode_frame_fields(c.take(frame_len))
    timings = JobTimings(*c.unpack(">QQQQ"))
    (wid_len,) = c.unpack(">B")
    worker_id = c.text(wid_len)
    return fields, timings, worker_id


def encode_error(code: int, detail: str) -> bytes:
    raw = detail.encode("utf-8")[:65535]
    return bytes((code,)) + struct.pack(">H", len(raw)) + raw
