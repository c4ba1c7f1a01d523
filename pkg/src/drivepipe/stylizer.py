"""Deterministic stylizer: request/result types, seed policy, and the mock worker.

The mock transform stands in for a neural stylizer while enforcing the two
contracts the pipeline depends on: byte-determinism for a fixed (frame,
condition, seed, strength) tuple, and verbatim preservation of every pixel the
condition map marks as an edge.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .conditioning import ConditionMap
from .frames import RGB8, Frame

_M64 = (1 << 64) - 1
NOISE_SPAN = 24  # raw per-pixel offset drawn from [-24, +24]


@dataclass(frozen=True)
class SeedPolicy:
    """Fixed-per-session seeding: every frame styles with the same seed.

    Re-using one seed is what turns the stylizer into a one-to-one mapping;
    the policy object exists so the pipeline never invents seeds ad hoc.
    """

    session_seed: int = 42
    mode: str = "FixedPerSession"

    def __post_init__(self) -> None:
        if self.mode != "FixedPerSession":
            raise ValueError(f"unsupported seed policy mode {self.mode!r}")
        if not 0 <= self.session_seed < 2**64:
            raise ValueError("session_seed must fit in 64 bits")


def seed_for_frame(policy: SeedPolicy, frame_id: int) -> int:
    return policy.session_seed


@dataclass(frozen=True)
class StyleRequest:
    frame: Frame
    condition: ConditionMap
    seed: int
    steps: int = 1
    strength: float = 0.6
    style_id: str = "thunderhill"

    def __post_init__(self) -> None:
        if self.condition.frame_id != self.frame.id:
            raise ValueError("condition map does not belong to this frame")
        if (self.condition.width, self.condition.height) != (
            self.frame.width,
            self.frame.height,
        ):
            raise ValueError("condition map dimensions differ from frame")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 <= self.strength <= 1.0:
            raise ValueError("strength must lie in [0, 1]")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class StyleTimings:
    encode_ns: int
    inference_ns: int
    decode_ns: int
    total_ns: int


@dataclass(frozen=True)
class StyleResult:
    frame: Frame
    timings: StyleTimings
    worker_id: str = ""


_tone_lut_cache: np.ndarray | None = None


def tone_curve_lut() -> np.ndarray:
    """The fixed 3x256 per-channel tone curve shipped with the package."""
    global _tone_lut_cache
    if _tone_lut_cache is None:
        text = (
            resources.files("drivepipe").joinpath("data/tone_curve.csv").read_text()
        )
        rows = [
            [int(v) for v in line.split(",")]
            for line in text.strip().splitlines()
        ]
        lut = np.array(rows, dtype=np.uint8)
        if lut.shape != (3, 256):
            raise ValueError(f"tone curve table has shape {lut.shape}, want (3, 256)")
        _tone_lut_cache = lut
    return _tone_lut_cache


def mix64(z: int) -> int:
    """SplitMix64 finalizer; the integer-only scrambler behind the value noise."""
    z = (z + 0x9E3779B97F4A7C15) & _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def noise_offset(seed: int, x: int, y: int) -> int:
    """Raw value-noise offset in [-24, +24] keyed by (seed, x, y) only."""
    word = mix64(mix64(mix64(seed) ^ x) ^ y)
    return word % (2 * NOISE_SPAN + 1) - NOISE_SPAN


def _mix64_array(z: np.ndarray) -> np.ndarray:
    z = z + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def noise_plane(seed: int, width: int, height: int) -> np.ndarray:
    """(height, width) int64 plane of raw offsets; matches noise_offset pointwise."""
    xs = np.arange(width, dtype=np.uint64)
    ys = np.arange(height, dtype=np.uint64)
    inner = _mix64_array(np.uint64(mix64(seed)) ^ xs)
    words = _mix64_array(inner[None, :] ^ ys[:, None])
    return (words % np.uint64(2 * NOISE_SPAN + 1)).astype(np.int64) - NOISE_SPAN


def scale_offsets(raw: np.ndarray, strength: float) -> np.ndarray:
    """Scale raw offsets by strength in 8.8 fixed point (no float in the path)."""
    q = int(np.floor(strength * 256.0 + 0.5))
    q = max(0, min(256, q))
    return np.sign(raw) * ((np.abs(raw) * q + 128) >> 8)


def mock_stylize(req: StyleRequest, worker_id: str = "mock") -> StyleResult:
    """Deterministic stand-in transform: tone curve, keyed value noise, edge copy.

    Output bytes depend only on (frame bytes, condition bytes, seed, strength);
    steps and style_id are carried for protocol fidelity but do not change the
    mock's output.
    """
    if req.frame.format != RGB8:
        raise ValueError("mock stylizer expects RGB8 frames")
    t0 = time.monotonic_ns()
    rgb = req.frame.as_array()
    cond = req.condition.as_array()
    t1 = time.monotonic_ns()
    lut = tone_curve_lut()
    toned = np.empty_like(rgb)
    for c in range(3):
        toned[:, :, c] = lut[c][rgb[:, :, c]]
    offsets = scale_offsets(
        noise_plane(req.seed, req.frame.width, req.frame.height), req.strength
    )
    noisy = np.clip(toned.astype(np.int64) + offsets[:, :, None], 0, 255).astype(
        np.uint8
    )
    edge = cond == 255
    noisy[edge] = rgb[edge]
    t2 = time.monotonic_ns()
    out = req.frame.with_pixels(noisy)
    t3 = time.monotonic_ns()
    timings = StyleTimings(
        encode_ns=t1 - t0, inference_ns=t2 - t1, decode_ns=t3 - t2, total_ns=t3 - t0
    )
    return StyleResult(frame=out, timings=timings, worker_id=worker_id)
