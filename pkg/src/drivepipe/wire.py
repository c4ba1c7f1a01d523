"""Binary envelope codec for frame and control traffic.

Every message is an Envelope: magic ``DRV1``, version byte, message-type byte,
big-endian u32 payload length, payload.  All integers on the wire are
big-endian and fixed width; floats are IEEE-754 binary32.  The decoder never
reads past the declared payload length and maps every malformed input to a
categorized DecodeError.
"""

from __future__ import annotations

import socket
import struct
from dataclasses import dataclass

import numpy as np

from .conditioning import ConditionMap, ThresholdField
from .frames import Frame
from .stylizer import StyleRequest, StyleResult, StyleTimings

MAGIC = b"DRV1"
VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
HEADER_LEN = 4 + 1 + 1 + 4

MSG_FRAME = 1
MSG_CONDITION = 2
MSG_STYLE_REQUEST = 3
MSG_STYLE_RESULT = 4
MSG_CONTROL = 5
MSG_METRICS = 6
MSG_SUBSCRIBE = 7
MSG_ERROR = 8

_KNOWN_TYPES = frozenset(range(1, 9))

TOPIC_RAW = "frames/raw"
TOPIC_CONDITION = "frames/condition"
TOPIC_STYLED = "frames/styled"
TOPIC_CONTROL = "control"
TOPIC_METRICS = "metrics"
TOPICS = frozenset((TOPIC_RAW, TOPIC_CONDITION, TOPIC_STYLED, TOPIC_CONTROL, TOPIC_METRICS))
IMAGE_TOPICS = frozenset((TOPIC_RAW, TOPIC_CONDITION, TOPIC_STYLED))

ROLE_SUBSCRIBE = 0
ROLE_PUBLISH = 1
ROLE_CREDIT = 2  # subscriber signals readiness for the next message

ERR_INVALID_TOPIC = 1
ERR_MALFORMED = 2
ERR_WORKER = 3


class DecodeError(ValueError):
    """Malformed wire data; .category names the failure class."""

    def __init__(self, category: str, detail: str = ""):
        super().__init__(f"{category}: {detail}" if detail else category)
        self.category = category


@dataclass(frozen=True)
class Envelope:
    msg_type: int
    payload: bytes
    version: int = VERSION


def encode_envelope(msg_type: int, payload: bytes) -> bytes:
    if msg_type not in _KNOWN_TYPES:
        raise ValueError(f"unknown msg_type {msg_type}")
    if len(payload) > MAX_PAYLOAD:
        raise ValueError(f"payload of {len(payload)} bytes exceeds 16 MiB cap")
    return MAGIC + bytes((VERSION, msg_type)) + struct.pack(">I", len(payload)) + payload


def decode_envelope_at(data: bytes, offset: int = 0) -> tuple[Envelope, int]:
    """Decode one envelope starting at offset; returns it and the next offset."""
    if len(data) - offset < HEADER_LEN:
        raise DecodeError("short read", f"{len(data) - offset} header bytes")
    if data[offset : offset + 4] != MAGIC:
        raise DecodeError("bad magic", repr(bytes(data[offset : offset + 4])))
    version = data[offset + 4]
    if version != VERSION:
        raise DecodeError("bad version", str(version))
    msg_type = data[offset + 5]
    if msg_type not in _KNOWN_TYPES:
        raise DecodeError("unknown type", str(msg_type))
    (payload_len,) = struct.unpack_from(">I", data, offset + 6)
    if payload_len > MAX_PAYLOAD:
        raise DecodeError("oversize", f"{payload_len} bytes")
    end = offset + HEADER_LEN + payload_len
    if len(data) < end:
        raise DecodeError(
            "length mismatch", f"declared {payload_len}, have {len(data) - offset - HEADER_LEN}"
        )
    return Envelope(msg_type, bytes(data[offset + HEADER_LEN : end])), end


def decode_envelope(data: bytes) -> Envelope:
    """Decode the envelope at the start of data; trailing bytes are ignored."""
    env, _ = decode_envelope_at(data, 0)
    return env


class _Reader:
    """Bounds-checked big-endian payload reader."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DecodeError("truncated payload", f"need {n} at {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def f32(self) -> float:
        return struct.unpack(">f", self.take(4))[0]

    def str8(self) -> str:
        n = self.u8()
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("bad string", str(exc)) from None

    def expect_end(self) -> None:
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes", f"{len(self.data) - self.pos} left")


def _str8(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 255:
        raise ValueError("string field exceeds 255 bytes")
    return bytes((len(raw),)) + raw


def encode_frame_payload(frame: Frame) -> bytes:
    return b"".join(
        (
            struct.pack(">QQHHB", frame.id, frame.ts_ns, frame.width, frame.height, frame.format),
            _str8(frame.source_id),
            frame.pixels,
        )
    )


def encode_frame(frame: Frame) -> bytes:
    return encode_envelope(MSG_FRAME, encode_frame_payload(frame))


def decode_frame_payload(payload: bytes) -> Frame:
    r = _Reader(payload)
    fid, ts = r.u64(), r.u64()
    w, h = r.u16(), r.u16()
    fmt = r.u8()
    source = r.str8()
    rest = r.data[r.pos :]
    try:
        frame = Frame(fid, ts, w, h, fmt, bytes(rest), source)
    except ValueError as exc:
        raise DecodeError("invalid frame", str(exc)) from None
    return frame


def encode_condition_payload(cond: ConditionMap) -> bytes:
    return struct.pack(">QHH", cond.frame_id, cond.width, cond.height) + cond.data


def decode_condition_payload(payload: bytes) -> ConditionMap:
    r = _Reader(payload)
    fid, w, h = r.u64(), r.u16(), r.u16()
    data = bytes(r.data[r.pos :])
    if len(data) != w * h:
        raise DecodeError("invalid condition map", f"{len(data)} bytes for {w}x{h}")
    arr = np.frombuffer(data, dtype=np.uint8)
    if data and not np.isin(arr, (0, 255)).all():
        raise DecodeError("invalid condition map", "values outside {0, 255}")
    try:
        return ConditionMap(fid, w, h, data)
    except ValueError as exc:
        raise DecodeError("invalid condition map", str(exc)) from None


def encode_style_request_payload(req: StyleRequest) -> bytes:
    frame = encode_frame_payload(req.frame)
    cond = encode_condition_payload(req.condition)
    return b"".join(
        (
            struct.pack(">I", len(frame)),
            frame,
            struct.pack(">I", len(cond)),
            cond,
            struct.pack(">QHf", req.seed, req.steps, req.strength),
            _str8(req.style_id),
        )
    )


def decode_style_request_payload(payload: bytes) -> StyleRequest:
    r = _Reader(payload)
    frame = decode_frame_payload(r.take(r.u32()))
    cond = decode_condition_payload(r.take(r.u32()))
    seed = r.u64()
    steps = r.u16()
    strength = r.f32()
    style_id = r.str8()
    r.expect_end()
    try:
        return StyleRequest(frame, cond, seed, steps, strength, style_id)
    except ValueError as exc:
        raise DecodeError("invalid style request", str(exc)) from None


def encode_style_result_payload(res: StyleResult) -> bytes:
    frame = encode_frame_payload(res.frame)
    t = res.timings
    return b"".join(
        (
            struct.pack(">I", len(frame)),
            frame,
            struct.pack(">QQQQ", t.encode_ns, t.inference_ns, t.decode_ns, t.total_ns),
            _str8(res.worker_id),
        )
    )


def decode_style_result_payload(payload: bytes) -> StyleResult:
    r = _Reader(payload)
    frame = decode_frame_payload(r.take(r.u32()))
    timings = StyleTimings(r.u64(), r.u64(), r.u64(), r.u64())
    worker_id = r.str8()
    r.expect_end()
    return StyleResult(frame, timings, worker_id)


@dataclass(frozen=True)
class ControlUpdate:
    """Driver inputs plus the interactive-conditioning state, sampled per tick."""

    steer: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0
    enhancement_enabled: bool = True
    focus_active: bool = False
    focus: tuple[float, float] = (0.0, 0.0)
    r_inner: float = 0.0
    r_outer: float = 1.0
    t_fine: tuple[float, float] = (0.0, 1.0)
    t_coarse: tuple[float, float] = (0.0, 1.0)

    def threshold_field(self) -> ThresholdField | None:
        if not self.focus_active:
            return None
        return ThresholdField(self.focus, self.r_inner, self.r_outer, self.t_fine, self.t_coarse)


def encode_control_payload(c: ControlUpdate) -> bytes:
    return struct.pack(
        ">fffBBffffffff",
        c.steer,
        c.throttle,
        c.brake,
        1 if c.enhancement_enabled else 0,
        1 if c.focus_active else 0,
        c.focus[0],
        c.focus[1],
        c.r_inner,
        c.r_outer,
        c.t_fine[0],
        c.t_fine[1],
        c.t_coarse[0],
        c.t_coarse[1],
    )


def decode_control_payload(payload: bytes) -> ControlUpdate:
    r = _Reader(payload)
    steer, throttle, brake = r.f32(), r.f32(), r.f32()
    enh, focus_active = r.u8(), r.u8()
    vals = [r.f32() for _ in range(8)]
    r.expect_end()
    return ControlUpdate(
        steer=steer,
        throttle=throttle,
        brake=brake,
        enhancement_enabled=bool(enh),
        focus_active=bool(focus_active),
        focus=(vals[0], vals[1]),
        r_inner=vals[2],
        r_outer=vals[3],
        t_fine=(vals[4], vals[5]),
        t_coarse=(vals[6], vals[7]),
    )


@dataclass(frozen=True)
class MetricsSnapshot:
    """Trailing pipeline health: fps, drop rate, latency percentiles."""

    achieved_fps: float
    drop_rate: float
    p50_ns: int
    p95_ns: int
    p99_ns: int

    def __post_init__(self) -> None:
        if not self.p50_ns <= self.p95_ns <= self.p99_ns:
            raise ValueError("percentiles must be non-decreasing")
        if self.achieved_fps < 0:
            raise ValueError("fps must be >= 0")


def encode_metrics_payload(m: MetricsSnapshot) -> bytes:
    return struct.pack(
        ">IIQQQ",
        round(m.achieved_fps * 1000),
        round(m.drop_rate * 1000),
        m.p50_ns,
        m.p95_ns,
        m.p99_ns,
    )


def decode_metrics_payload(payload: bytes) -> MetricsSnapshot:
    r = _Reader(payload)
    fps_milli, drop_milli = r.u32(), r.u32()
    p50, p95, p99 = r.u64(), r.u64(), r.u64()
    r.expect_end()
    try:
        return MetricsSnapshot(fps_milli / 1000.0, drop_milli / 1000.0, p50, p95, p99)
    except ValueError as exc:
        raise DecodeError("invalid metrics", str(exc)) from None


def encode_subscribe_payload(role: int, topic: str) -> bytes:
    if role not in (ROLE_SUBSCRIBE, ROLE_PUBLISH, ROLE_CREDIT):
        raise ValueError(f"bad role {role}")
    return bytes((role,)) + _str8(topic)


def decode_subscribe_payload(payload: bytes) -> tuple[int, str]:
    r = _Reader(payload)
    role = r.u8()
    topic = r.str8()
    r.expect_end()
    if role not in (ROLE_SUBSCRIBE, ROLE_PUBLISH, ROLE_CREDIT):
        raise DecodeError("bad role", str(role))
    return role, topic


def encode_error_payload(code: int, detail: str) -> bytes:
    raw = detail.encode("utf-8")[:65535]
    return bytes((code,)) + struct.pack(">H", len(raw)) + raw


def decode_error_payload(payload: bytes) -> tuple[int, str]:
    r = _Reader(payload)
    code = r.u8()
    n = r.u16()
    try:
        detail = r.take(n).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise DecodeError("bad string", str(exc)) from None
    r.expect_end()
    return code, detail


_PAYLOAD_DECODERS = {
    MSG_FRAME: decode_frame_payload,
    MSG_CONDITION: decode_condition_payload,
    MSG_STYLE_REQUEST: decode_style_request_payload,
    MSG_STYLE_RESULT: decode_style_result_payload,
    MSG_CONTROL: decode_control_payload,
    MSG_METRICS: decode_metrics_payload,
    MSG_SUBSCRIBE: decode_subscribe_payload,
    MSG_ERROR: decode_error_payload,
}


def decode_payload(env: Envelope):
    """Decode an envelope's payload to its message object."""
    return _PAYLOAD_DECODERS[env.msg_type](env.payload)


def send_envelope(sock: socket.socket, msg_type: int, payload: bytes) -> None:
    sock.sendall(encode_envelope(msg_type, payload))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            raise ConnectionError("connection closed mid-envelope" if chunks or remaining < n else "connection closed")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def recv_envelope(sock: socket.socket) -> Envelope:
    """Read exactly one envelope from a stream socket."""
    header = _recv_exact(sock, HEADER_LEN)
    if header[:4] != MAGIC:
        raise DecodeError("bad magic", repr(header[:4]))
    if header[4] != VERSION:
        raise DecodeError("bad version", str(header[4]))
    msg_type = header[5]
    if msg_type not in _KNOWN_TYPES:
        raise DecodeError("unknown type", str(msg_type))
    (payload_len,) = struct.unpack_from(">I", header, 6)
    if payload_len > MAX_PAYLOAD:
        raise DecodeError("oversize", f"{payload_len} bytes")
    payload = _recv_exact(sock, payload_len) if payload_len else b""
    return Envelope(msg_type, payload)
