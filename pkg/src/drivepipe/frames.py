"""Core image types, pixel-buffer utilities, manifest ingestion and sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

RGB8 = 0
GRAY8 = 1

_FORMAT_CHANNELS = {RGB8: 3, GRAY8: 1}


class ManifestError(ValueError):
    """Raised for missing, malformed or inconsistent manifest files."""


def round_half_up_u8(values: np.ndarray) -> np.ndarray:
    """Round to nearest integer, halves up, saturated to [0, 255] uint8.

    This is the single rounding rule shared by every image kernel in the
    package; np.round would round halves to even and disagree with the
    hand-computed expectations.
    """
    return np.clip(np.floor(values + 0.5), 0.0, 255.0).astype(np.uint8)


@dataclass(frozen=True)
class Frame:
    """A timestamped raw pixel buffer, the unit flowing through every stage.

    Pixels are row-major, top-left origin, 8 bits per channel.  RGB8 buffers
    hold width*height*3 bytes, GRAY8 buffers width*height.
    """

    id: int
    ts_ns: int
    width: int
    height: int
    format: int
    pixels: bytes
    source_id: str = ""

    def __post_init__(self) -> None:
        if self.format not in _FORMAT_CHANNELS:
            raise ValueError(f"unknown pixel format {self.format}")
        expected = self.width * self.height * _FORMAT_CHANNELS[self.format]
        if len(self.pixels) != expected:
            raise ValueError(
                f"pixel buffer is {len(self.pixels)} bytes, expected {expected} "
                f"for {self.width}x{self.height}"
            )
        if self.id < 0 or self.ts_ns < 0:
            raise ValueError("id and ts_ns must be non-negative")

    @property
    def channels(self) -> int:
        return _FORMAT_CHANNELS[self.format]

    def as_array(self) -> np.ndarray:
        """View pixels as (height, width) or (height, width, 3) uint8 array."""
        arr = np.frombuffer(self.pixels, dtype=np.uint8)
        if self.format == RGB8:
            return arr.reshape(self.height, self.width, 3)
        return arr.reshape(self.height, self.width)

    def with_pixels(self, arr: np.ndarray, format: int | None = None) -> "Frame":
        """Same identity and timestamp, new pixel content."""
        fmt = self.format if format is None else format
        h, w = arr.shape[:2]
        return replace(
            self, width=w, height=h, format=fmt, pixels=arr.astype(np.uint8).tobytes()
        )


def frame_from_array(
    arr: np.ndarray, *, id: int = 0, ts_ns: int = 0, source_id: str = ""
) -> Frame:
    arr = np.asarray(arr, dtype=np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 3:
        fmt = RGB8
    elif arr.ndim == 2:
        fmt = GRAY8
    else:
        raise ValueError(f"array shape {arr.shape} is neither RGB nor grayscale")
    h, w = arr.shape[:2]
    return Frame(id, ts_ns, w, h, fmt, arr.tobytes(), source_id)


@dataclass(frozen=True)
class FrameManifest:
    """Ordered (relative path, ts_ns) entries backing a replay source."""

    entries: tuple[tuple[str, int], ...]
    base_dir: str = "."

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, index: int) -> str:
        return os.path.join(self.base_dir, self.entries[index][0])


@dataclass(frozen=True)
class PipelineConfig:
    """Resolution, rate budget, seed and conditioning parameters for one pipeline."""

    width: int = 640
    height: int = 480
    target_fps: float = 10.0
    seed: int = 42
    canny_low: float = 50.0
    canny_high: float = 150.0
    blur_sigma: float = 1.0
    worker_endpoint: str | None = None
    enhancement_enabled: bool = True
    strength: float = 0.6
    style_id: str = "thunderhill"

    def __post_init__(self) -> None:
        if self.width < 64 or self.height < 64 or self.width % 2 or self.height % 2:
            raise ValueError("width and height must be even and >= 64")
        if self.target_fps <= 0:
            raise ValueError("target_fps must be positive")
        if not (0 <= self.canny_low <= self.canny_high <= 255):
            raise ValueError("thresholds must satisfy 0 <= low <= high <= 255")
        if self.canny_low == self.canny_high and self.canny_high != 0:
            raise ValueError("thresholds must satisfy low < high when nonzero")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


def load_manifest(path: str) -> FrameManifest:
    """Parse a replay manifest: one `path<TAB>ts_ns` per line, UTF-8, LF.

    Entries come back sorted by ts_ns (stable for equal timestamps).  Blank
    lines are skipped; anything else malformed names its line number.
    """
    if not os.path.isfile(path):
        raise ManifestError(f"manifest not found: {path}")
    entries: list[tuple[str, int]] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0]:
                raise ManifestError(f"line {lineno}: expected `path<TAB>ts_ns`")
            rel, ts_text = parts
            try:
                ts = int(ts_text)
            except ValueError:
                raise ManifestError(
                    f"line {lineno}: timestamp {ts_text!r} is not an integer"
                ) from None
            if rel in seen:
                raise ManifestError(f"line {lineno}: duplicate path {rel!r}")
            seen.add(rel)
            entries.append((rel, ts))
    entries.sort(key=lambda e: e[1])
    return FrameManifest(tuple(entries), base_dir=os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: FrameManifest, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rel, ts in manifest.entries:
            fh.write(f"{rel}\t{ts}\n")


def sample_uniform(manifest: FrameManifest, k: int) -> FrameManifest:
    """Pick k entries at indices floor(i*N/k), preserving order.

    Deterministic stride sampling: the same device used to thin a recorded
    lap video down to a fixed-size dataset.
    """
    n = len(manifest.entries)
    if k < 0 or k > n:
        raise ValueError(f"cannot sample {k} of {n} entries")
    if k == 0:
        return FrameManifest((), base_dir=manifest.base_dir)
    picked = tuple(manifest.entries[(i * n) // k] for i in range(k))
    return FrameManifest(picked, base_dir=manifest.base_dir)


def resize_bilinear(frame: Frame, w: int, h: int) -> Frame:
    """Bilinear resample with pixel-center alignment.

    Output pixel j samples source position (j+0.5)*src/dst - 0.5, clamped to
    the valid range.  Same-size resize is byte-exact; constants are fixed
    points at any scale.
    """
    if w < 1 or h < 1:
        raise ValueError("target dimensions must be >= 1")
    if (w, h) == (frame.width, frame.height):
        return frame
    src = frame.as_array()
    if src.ndim == 2:
        src = src[:, :, None]
    sh, sw = src.shape[:2]

    def axis_samples(dst: int, size: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(dst, dtype=np.float64) + 0.5) * (size / dst) - 0.5
        pos = np.clip(pos, 0.0, size - 1.0)
        i0 = np.floor(pos).astype(np.int64)
        i1 = np.minimum(i0 + 1, size - 1)
        return i0, i1, pos - i0

    x0, x1, fx = axis_samples(w, sw)
    y0, y1, fy = axis_samples(h, sh)
    img = src.astype(np.float64)
    # separable: interpolate columns on every source row, then rows
    horiz = img[:, x0] * (1.0 - fx)[None, :, None] + img[:, x1] * fx[None, :, None]
    out_f = horiz[y0] * (1.0 - fy)[:, None, None] + horiz[y1] * fy[:, None, None]
    out = round_half_up_u8(out_f)
    if frame.format == GRAY8:
        out = out[:, :, 0]
    return frame.with_pixels(out)


def write_ppm(frame: Frame, path: str) -> None:
    """Write a frame as binary PPM (P6) or PGM (P5 for GRAY8), maxval 255."""
    magic = b"P6" if frame.format == RGB8 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, frame.width, frame.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(frame.pixels)


def read_ppm(path: str, *, id: int = 0, ts_ns: int = 0, source_id: str = "") -> Frame:
    """Read a binary PPM/PGM written by write_ppm (byte-exact round trip)."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    magic, w_text, h_text, maxval = fields
    if magic not in (b"P6", b"P5"):
        raise ValueError(f"{path}: not a binary PPM/PGM (magic {magic!r})")
    if maxval != b"255":
        raise ValueError(f"{path}: unsupported maxval {maxval!r}")
    w, h = int(w_text), int(h_text)
    fmt = RGB8 if magic == b"P6" else GRAY8
    nbytes = w * h * _FORMAT_CHANNELS[fmt]
    pixels = data[pos : pos + nbytes]
    if len(pixels) != nbytes:
        raise ValueError(f"{path}: truncated pixel data")
    return Frame(id, ts_ns, w, h, fmt, pixels, source_id)
