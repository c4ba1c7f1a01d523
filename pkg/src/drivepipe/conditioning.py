"""Edge-map extraction: the spatial control signal for the stylizer.

The full detector runs grayscale -> Gaussian blur -> Sobel -> non-maximum
suppression -> double threshold -> hysteresis.  Everything is deterministic
and order-independent; the hysteresis result is defined as a set (weak pixels
8-connected to a strong pixel), so the connected-component implementation is
interchangeable with a naive flood fill.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .frames import GRAY8, RGB8, Frame, round_half_up_u8

# Quantized gradient orientations and their positive neighbor step (dx, dy).
# y grows downward; 45 deg therefore points down-right on screen.
_DIR_STEPS = ((1, 0), (1, 1), (0, 1), (-1, 1))
_TAN_22_5 = math.tan(math.radians(22.5))
_TAN_67_5 = math.tan(math.radians(67.5))


@dataclass(frozen=True)
class ConditionMap:
    """Single-channel edge image aligned 1:1 with its source frame.

    data holds GRAY8 bytes, 255 = edge, 0 = non-edge.  params records the
    (low, high, sigma) used, or None when the map arrived over the wire.
    """

    frame_id: int
    width: int
    height: int
    data: bytes
    params: tuple[float, float, float] | None = None

    def __post_init__(self) -> None:
        if len(self.data) != self.width * self.height:
            raise ValueError("condition map size does not match dimensions")

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(self.height, self.width)

    def edge_count(self) -> int:
        return int(np.count_nonzero(self.as_array()))


@dataclass(frozen=True)
class ThresholdField:
    """Spatially varying double threshold: fine at the focus, coarse outside.

    Between r_inner and r_outer both members of the (low, high) pair are
    linearly interpolated with distance from the focus point.
    """

    focus: tuple[float, float]
    r_inner: float
    r_outer: float
    t_fine: tuple[float, float]
    t_coarse: tuple[float, float]

    def __post_init__(self) -> None:
        if not self.r_inner < self.r_outer:
            raise ValueError("r_inner must be < r_outer")
        for low, high in (self.t_fine, self.t_coarse):
            if not low < high:
                raise ValueError("each threshold pair must satisfy low < high")

    def thresholds_at(self, distance: float) -> tuple[float, float]:
        if distance <= self.r_inner:
            return self.t_fine
        if distance >= self.r_outer:
            return self.t_coarse
        s = (distance - self.r_inner) / (self.r_outer - self.r_inner)
        return (
            self.t_fine[0] + s * (self.t_coarse[0] - self.t_fine[0]),
            self.t_fine[1] + s * (self.t_coarse[1] - self.t_fine[1]),
        )


def to_grayscale(frame: Frame) -> Frame:
    """BT.601 luma: y = round(0.299 R + 0.587 G + 0.114 B), saturated."""
    if frame.format != RGB8:
        raise ValueError("to_grayscale expects an RGB8 frame")
    rgb = frame.as_array().astype(np.float64)
    y = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    return frame.with_pixels(round_half_up_u8(y), format=GRAY8)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian taps with radius ceil(3*sigma)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    radius = math.ceil(3.0 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of a GRAY8 plane, clamp-to-edge borders."""
    kernel = gaussian_kernel(sigma)
    radius = len(kernel) // 2
    acc = np.pad(img.astype(np.float64), radius, mode="edge")
    h, w = img.shape
    # horizontal pass over padded rows, then vertical over padded columns
    horiz = np.zeros((h + 2 * radius, w), dtype=np.float64)
    for t, weight in enumerate(kernel):
        horiz += weight * acc[:, t : t + w]
    out = np.zeros((h, w), dtype=np.float64)
    for t, weight in enumerate(kernel):
        out += weight * horiz[t : t + h, :]
    return round_half_up_u8(out)


def sobel_gradients(
    img: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """3x3 Sobel gradients with clamp-to-edge borders.

    Returns (gx, gy) int16 planes, float magnitude, and the orientation plane
    quantized to indices {0, 1, 2, 3} for {0, 45, 90, 135} degrees.
    """
    h, w = img.shape
    if h < 3 or w < 3:
        raise ValueError("image must be at least 3x3")
    p = np.pad(img.astype(np.int32), 1, mode="edge")
    nw, n, ne = p[:-2, :-2], p[:-2, 1:-1], p[:-2, 2:]
    west, east = p[1:-1, :-2], p[1:-1, 2:]
    sw, s, se = p[2:, :-2], p[2:, 1:-1], p[2:, 2:]
    gx = (ne + 2 * east + se) - (nw + 2 * west + sw)
    gy = (sw + 2 * s + se) - (nw + 2 * n + ne)
    mag = np.sqrt(gx.astype(np.float64) ** 2 + gy.astype(np.float64) ** 2)
    ax = np.abs(gx).astype(np.float64)
    ay = np.abs(gy).astype(np.float64)
    direction = np.full(img.shape, 1, dtype=np.uint8)
    direction[(gx.astype(np.int64) * gy) < 0] = 3
    direction[ay <= _TAN_22_5 * ax] = 0
    direction[ay >= _TAN_67_5 * ax] = 2
    return gx.astype(np.int16), gy.astype(np.int16), mag, direction


def _suppress_non_maxima(mag: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Keep a pixel iff mag > neighbor in the negative quantized direction and
    mag >= neighbor in the positive one (clamp-to-edge lookups).

    The asymmetric tie-break thins symmetric-step plateaus to one pixel; exact
    magnitude ties are therefore resolved toward the negative-direction side.
    """
    h, w = mag.shape
    p = np.pad(mag, 1, mode="edge")
    keep = np.zeros(mag.shape, dtype=bool)
    for d, (dx, dy) in enumerate(_DIR_STEPS):
        pos = p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        neg = p[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        sel = direction == d
        keep |= sel & (mag > neg) & (mag >= pos)
    return np.where(keep, mag, 0.0)


def _hysteresis(thinned: np.ndarray, low, high) -> np.ndarray:
    """Strong pixels (>= high) plus weak ones (>= low) 8-connected to a strong."""
    weak = thinned >= low
    strong = thinned >= high
    if not strong.any():
        return np.zeros(thinned.shape, dtype=np.uint8)
    labels, count = ndimage.label(weak, structure=np.ones((3, 3), dtype=np.int32))
    keep = np.zeros(count + 1, dtype=bool)
    keep[np.unique(labels[strong])] = True
    keep[0] = False
    return np.where(keep[labels], np.uint8(255), np.uint8(0))


def _gray_plane(frame: Frame) -> np.ndarray:
    if frame.format == RGB8:
        return to_grayscale(frame).as_array()
    return frame.as_array()


def canny(frame: Frame, low: float, high: float, sigma: float = 1.0) -> ConditionMap:
    """Full edge detector with scalar double thresholds."""
    if not low < high:
        raise ValueError("canny requires low < high")
    gray = _gray_plane(frame)
    blurred = gaussian_blur(gray, sigma)
    _, _, mag, direction = sobel_gradients(blurred)
    thinned = _suppress_non_maxima(mag, direction)
    edges = _hysteresis(thinned, low, high)
    return ConditionMap(
        frame.id, frame.width, frame.height, edges.tobytes(), (low, high, sigma)
    )


def threshold_planes(
    field: ThresholdField, width: int, height: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (low, high) planes induced by a threshold field."""
    ys, xs = np.mgrid[0:height, 0:width]
    d = np.sqrt(
        (xs - field.focus[0]).astype(np.float64) ** 2
        + (ys - field.focus[1]).astype(np.float64) ** 2
    )
    s = np.clip((d - field.r_inner) / (field.r_outer - field.r_inner), 0.0, 1.0)
    low = field.t_fine[0] + s * (field.t_coarse[0] - field.t_fine[0])
    high = field.t_fine[1] + s * (field.t_coarse[1] - field.t_fine[1])
    return low, high


def canny_spatially_varying(
    frame: Frame, field: ThresholdField, sigma: float = 1.0
) -> ConditionMap:
    """Edge detector with per-pixel double thresholds around a focus point.

    A weak pixel qualifies against its own low threshold and a strong one
    against its own high; suppression and hysteresis are otherwise identical
    to the uniform detector.
    """
    gray = _gray_plane(frame)
    blurred = gaussian_blur(gray, sigma)
    _, _, mag, direction = sobel_gradients(blurred)
    thinned = _suppress_non_maxima(mag, direction)
    low, high = threshold_planes(field, frame.width, frame.height)
    edges = _hysteresis(thinned, low, high)
    return ConditionMap(frame.id, frame.width, frame.height, edges.tobytes(), None)
