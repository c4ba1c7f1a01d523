"""Desk-scale driving world: closed track, racing-line arrows, kinematic
vehicle, and a flat-shaded pinhole renderer producing pipeline frames.

Rendering is deliberately low-detail (sky, grass, asphalt, lane boundaries,
arrow markers): the aesthetic burden belongs to the stylizer, the renderer
only has to put the task-relevant contours in the right place.  Each rendered
frame comes with the exact lane-marking pixel mask so conditioning quality is
measurable against ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .frames import Frame, frame_from_array

WHEELBASE_M = 2.7
MAX_STEER_RAD = 0.5
ACCEL_MPS2 = 3.0
BRAKE_MPS2 = 6.0
DRAG_PER_S = 0.05
V_MAX_MPS = 13.89  # 50 km/h
TICK_S = 0.01
TICK_NS = 10_000_000

TRACK_LENGTH_M = 3218.688  # two miles
MARKING_WIDTH_M = 0.15
ARROW_SPACING_M = 10.0

SKY_RGB = (96, 154, 233)
GRASS_RGB = (60, 148, 52)
ASPHALT_RGB = (70, 70, 74)
MARKING_RGB = (240, 240, 240)
ARROW_RGB = (240, 200, 40)


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    t_ns: int = 0


@dataclass(frozen=True)
class ControlInput:
    steer: float = 0.0  # [-1, 1], scales to the max wheel angle
    throttle: float = 0.0  # [0, 1]
    brake: float = 0.0  # [0, 1]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 320.0
    cy: float = 240.0

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        """Intrinsics proportionally rescaled from the 640x480 defaults."""
        sx, sy = width / 640.0, height / 480.0
        return CameraIntrinsics(self.fx * sx, self.fy * sy, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class CameraPose:
    """Camera position and orientation: yaw about +z, then pitch (negative = down)."""

    position: tuple[float, float, float]
    yaw: float
    pitch: float

    def basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(right, down, forward) unit vectors in world coordinates."""
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        forward = np.array([cy * cp, sy * cp, sp])
        right = np.array([sy, -cy, 0.0])
        down = np.cross(forward, right)
        return right, down, forward


CAMERA_HEIGHT_M = 1.2
CAMERA_PITCH_RAD = math.radians(-5.0)


def camera_pose_for_vehicle(state: VehicleState) -> CameraPose:
    return CameraPose(
        position=(state.x, state.y, CAMERA_HEIGHT_M),
        yaw=state.heading,
        pitch=CAMERA_PITCH_RAD,
    )


@dataclass(frozen=True)
class Trajectory:
    """Tick-sampled vehicle path: strictly increasing timestamps."""

    t_ns: np.ndarray  # (N,) int64
    xy: np.ndarray  # (N, 2) float64
    speed: np.ndarray  # (N,) float64

    def __post_init__(self) -> None:
        n = len(self.t_ns)
        if self.xy.shape != (n, 2) or self.speed.shape != (n,):
            raise ValueError("trajectory arrays disagree on sample count")
        if n > 1 and not (np.diff(self.t_ns) > 0).all():
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t_ns)


class TrackModel:
    """Closed centerline with constant half width and a directed start line.

    The start line's travel direction is the segment vector (B - A) rotated
    90 degrees counterclockwise; lap splitting counts only crossings moving
    that way.  The shipped track is self-intersection free by construction;
    custom centerlines are trusted, not validated.
    """

    def __init__(
        self,
        centerline: np.ndarray,
        half_width: float,
        start_line: np.ndarray,
        name: str = "track",
    ):
        centerline = np.asarray(centerline, dtype=np.float64)
        if centerline.ndim != 2 or centerline.shape[1] != 2 or len(centerline) < 4:
            raise ValueError("centerline must be an (N, 2) array, N >= 4")
        if not np.allclose(centerline[0], centerline[-1]):
            raise ValueError("centerline must be closed (first == last point)")
        if half_width <= 0:
            raise ValueError("half_width must be positive")
        self.centerline = centerline
        self.half_width = float(half_width)
        self.start_line = np.asarray(start_line, dtype=np.float64).reshape(2, 2)
        self.name = name

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.centerline, axis=0), axis=1).sum())


class RacingLine:
    """Reference lap path with arrow marker poses every arrow_spacing meters."""

    def __init__(self, polyline: np.ndarray, arrow_spacing: float = ARROW_SPACING_M):
        polyline = np.asarray(polyline, dtype=np.float64)
        if polyline.ndim != 2 or polyline.shape[1] != 2 or len(polyline) < 2:
            raise ValueError("racing line must be an (N, 2) array, N >= 2")
        if arrow_spacing <= 0:
            raise ValueError("arrow spacing must be positive")
        self.polyline = polyline
        self.arrow_spacing = float(arrow_spacing)
        self.arrows = _poses_along(polyline, arrow_spacing)


def _poses_along(polyline: np.ndarray, spacing: float) -> np.ndarray:
    """(K, 3) array of (x, y, heading) sampled by arc length along a polyline."""
    seg = np.diff(polyline, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 1e-12
    seg, seg_len = seg[keep], seg_len[keep]
    starts = polyline[:-1][keep]
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    targets = np.arange(0.0, total, spacing)
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / seg_len[idx]
    pts = starts[idx] + seg[idx] * frac[:, None]
    headings = np.arctan2(seg[idx, 1], seg[idx, 0])
    return np.column_stack([pts, headings])


# ---------------------------------------------------------------------------
# vehicle model
# ---------------------------------------------------------------------------


def step_vehicle(state: VehicleState, control: ControlInput, dt: float) -> VehicleState:
    """Forward-Euler kinematic bicycle step; control inputs are clamped.

    Heading rate is (v / wheelbase) * tan(wheel angle); speed integrates
    throttle and brake accelerations against linear drag and saturates at the
    50 km/h cap.
    """
    if not 0.0 < dt <= 0.1:
        raise ValueError("dt must lie in (0, 0.1] seconds")
    steer = min(1.0, max(-1.0, control.steer))
    throttle = min(1.0, max(0.0, control.throttle))
    brake = min(1.0, max(0.0, control.brake))
    delta = steer * MAX_STEER_RAD
    v = state.speed
    x = state.x + v * math.cos(state.heading) * dt
    y = state.y + v * math.sin(state.heading) * dt
    heading = state.heading + (v / WHEELBASE_M) * math.tan(delta) * dt
    accel = ACCEL_MPS2 * throttle - BRAKE_MPS2 * brake - DRAG_PER_S * v
    speed = min(V_MAX_MPS, max(0.0, v + accel * dt))
    return VehicleState(x, y, heading, speed, state.t_ns + round(dt * 1e9))


# ---------------------------------------------------------------------------
# projection
# ---------------------------------------------------------------------------

BEHIND_CAMERA_Z = 0.01


def project_camera_point(
    intr: CameraIntrinsics, point: tuple[float, float, float]
) -> tuple[float, float] | None:
    """Pinhole projection of a camera-frame point (x right, y down, z forward)."""
    x, y, z = point
    if z <= BEHIND_CAMERA_Z:
        return None
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def world_to_camera(pose: CameraPose, world: np.ndarray) -> np.ndarray:
    right, down, forward = pose.basis()
    rel = np.asarray(world, dtype=np.float64) - np.asarray(pose.position)
    return np.array([rel @ right, rel @ down, rel @ forward])


def project_point(
    intr: CameraIntrinsics, pose: CameraPose, world: np.ndarray
) -> tuple[float, float] | None:
    """World-space point to pixel, or None when at/behind the camera plane."""
    cam = world_to_camera(pose, world)
    return project_camera_point(intr, (cam[0], cam[1], cam[2]))


# ---------------------------------------------------------------------------
# nearest-distance field over a polyline, grid-accelerated
# ---------------------------------------------------------------------------


class PolylineField:
    """Unsigned distance-to-polyline queries, exact within `reach`.

    A coarse grid maps each cell to the segments that could be nearest for
    points inside it; cells beyond reach carry no candidates and report +inf,
    which is all the renderer needs to call a point grass.  The per-cell
    center distances let callers classify whole cells and reserve exact
    segment math for cells straddling a band of interest.
    """

    def __init__(self, polyline: np.ndarray, reach: float, cell: float = 4.0):
        polyline = _dedupe_polyline(np.asarray(polyline, dtype=np.float64))
        self.a = polyline[:-1]
        self.b = polyline[1:]
        self.reach = float(reach)
        self.cell = float(cell)
        lo = polyline.min(axis=0) - (reach + 2 * cell)
        hi = polyline.max(axis=0) + (reach + 2 * cell)
        self.origin = lo
        self.shape = np.maximum(np.ceil((hi - lo) / cell).astype(int) + 1, 1)
        self.half_diag = cell * math.sqrt(0.5) * 1.0001
        buckets: dict[tuple[int, int], set[int]] = {}
        rad = int(math.ceil((reach + self.half_diag) / cell)) + 1
        keep_r2 = (reach + 2.0 * self.half_diag + cell * 0.5) ** 2
        for i, (a, b) in enumerate(zip(self.a, self.b)):
            n = max(2, int(math.ceil(np.linalg.norm(b - a) / (cell * 0.5))) + 1)
            for t in np.linspace(0.0, 1.0, n):
                p = a + t * (b - a)
                cx, cy = ((p - lo) / cell).astype(int)
                for dx in range(-rad, rad + 1):
                    for dy in range(-rad, rad + 1):
                        center = lo + (np.array([cx + dx, cy + dy]) + 0.5) * cell
                        if ((center - p) ** 2).sum() <= keep_r2:
                            buckets.setdefault((cx + dx, cy + dy), set()).add(i)
        k = max(len(v) for v in buckets.values())
        nx, ny = self.shape
        self.cand = np.zeros((nx, ny, k), dtype=np.int32)
        self.count = np.zeros((nx, ny), dtype=np.int32)
        for (cx, cy), ids in buckets.items():
            if 0 <= cx < nx and 0 <= cy < ny:
                ids_arr = np.fromiter(ids, dtype=np.int32)
                self.cand[cx, cy, : len(ids_arr)] = ids_arr
                self.count[cx, cy] = len(ids_arr)
        centers = np.stack(
            np.meshgrid(
                lo[0] + (np.arange(nx) + 0.5) * cell,
                lo[1] + (np.arange(ny) + 0.5) * cell,
                indexing="ij",
            ),
            axis=2,
        ).reshape(-1, 2)
        self.center_dist = self._exact(centers, np.full(len(centers), True)).reshape(nx, ny)

    def cells_of(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(cell indices (M, 2), in-grid mask) for query points."""
        cells = np.floor((pts - self.origin) / self.cell).astype(np.int64)
        nx, ny = self.shape
        inside = (
            (cells[:, 0] >= 0) & (cells[:, 0] < nx) & (cells[:, 1] >= 0) & (cells[:, 1] < ny)
        )
        return cells, inside

    def _exact(self, pts: np.ndarray, mask: np.ndarray) -> np.ndarray:
        """Exact distances for masked points; +inf outside candidate coverage."""
        out = np.full(len(pts), np.inf)
        if not mask.any():
            return out
        cells, inside = self.cells_of(pts)
        todo = mask & inside
        ci = cells[todo]
        counts = self.count[ci[:, 0], ci[:, 1]]
        active = counts > 0
        if not active.any():
            return out
        sel = np.flatnonzero(todo)[active]
        ci = ci[active]
        cand = self.cand[ci[:, 0], ci[:, 1]]  # (M, K)
        k_used = counts[active]
        p = pts[sel][:, None, :]  # (M, 1, 2)
        a = self.a[cand]  # (M, K, 2)
        b = self.b[cand]
        ab = b - a
        denom = (ab * ab).sum(axis=2)
        t = np.clip(((p - a) * ab).sum(axis=2) / np.maximum(denom, 1e-18), 0.0, 1.0)
        proj = a + t[:, :, None] * ab
        d = np.sqrt(((p - proj) ** 2).sum(axis=2))
        valid = np.arange(d.shape[1])[None, :] < k_used[:, None]
        d[~valid] = np.inf
        out[sel] = d.min(axis=1)
        return out

    def query(self, pts: np.ndarray) -> np.ndarray:
        """Min distance per point; +inf where farther than reach."""
        pts = np.asarray(pts, dtype=np.float64)
        if len(pts) == 0:
            return np.full(0, np.inf)
        return self._exact(pts, np.full(len(pts), True))

    def query_banded(self, pts: np.ndarray, band_lo: float, band_hi: float) -> np.ndarray:
        """Distances accurate near [band_lo, band_hi]; elsewhere only the side
        of the band is trustworthy (cell-center bound +/- half a diagonal)."""
        pts = np.asarray(pts, dtype=np.float64)
        if len(pts) == 0:
            return np.full(0, np.inf)
        cells, inside = self.cells_of(pts)
        center = np.full(len(pts), np.inf)
        ci = cells[inside]
        center[inside] = self.center_dist[ci[:, 0], ci[:, 1]]
        ambiguous = inside & (
            (center - self.half_diag <= band_hi) & (center + self.half_diag >= band_lo)
        )
        out = np.where(np.isfinite(center), center, np.inf)
        out[ambiguous] = self._exact(pts, ambiguous)[ambiguous]
        return out


def _dedupe_polyline(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate(([True], seg > 1e-12))
    return points[keep]


# ---------------------------------------------------------------------------
# renderer
# ---------------------------------------------------------------------------


def _arrow_triangles(arrows: np.ndarray) -> np.ndarray:
    """(K, 3, 2) ground triangles: tip forward, base behind, pointing along travel."""
    pos = arrows[:, :2]
    heading = arrows[:, 2]
    fwd = np.column_stack([np.cos(heading), np.sin(heading)])
    left = np.column_stack([-np.sin(heading), np.cos(heading)])
    tip = pos + 0.9 * fwd
    base_l = pos - 0.6 * fwd + 0.35 * left
    base_r = pos - 0.6 * fwd - 0.35 * left
    return np.stack([tip, base_l, base_r], axis=1)


class Renderer:
    """Flat-shaded ground-plane renderer for one (track, line, resolution).

    Every pixel below the horizon is ray-cast onto the ground plane and
    classified by its distance to the track centerline; arrow markers are
    painted last.  Identical vehicle states give byte-identical frames.
    """

    def __init__(
        self,
        track: TrackModel,
        line: RacingLine,
        intrinsics: CameraIntrinsics | None = None,
        width: int = 640,
        height: int = 480,
        max_distance: float = 250.0,
    ):
        self.track = track
        self.line = line
        self.width = width
        self.height = height
        self.max_distance = max_distance
        self.intrinsics = intrinsics or CameraIntrinsics().scaled(width, height)
        intr = self.intrinsics
        us, vs = np.meshgrid(np.arange(width), np.arange(height))
        self._dirs_cam = np.stack(
            [
                (us - intr.cx) / intr.fx,
                (vs - intr.cy) / intr.fy,
                np.ones((height, width)),
            ],
            axis=2,
        )
        self.field = PolylineField(track.centerline, reach=track.half_width + 1.0)
        self._triangles = _arrow_triangles(line.arrows)
        self._arrow_centers = line.arrows[:, :2]

    def render(self, state: VehicleState) -> tuple[np.ndarray, np.ndarray]:
        """(rgb uint8 (H, W, 3), lane-marking mask bool (H, W)) for a state."""
        pose = camera_pose_for_vehicle(state)
        right, down, forward = pose.basis()
        basis = np.stack([right, down, forward])
        dirs = self._dirs_cam @ basis  # (H, W, 3) world-space ray directions
        h, w = self.height, self.width
        img = np.empty((h, w, 3), dtype=np.uint8)
        img[:] = SKY_RGB

        dz = dirs[:, :, 2]
        ground = dz < -1e-9
        t = np.where(ground, -pose.position[2] / np.where(ground, dz, -1.0), np.inf)
        hit = ground & (t <= self.max_distance / 1.0)
        img[ground] = GRASS_RGB  # far ground defaults to grass

        pts = np.empty((int(hit.sum()), 2))
        pts[:, 0] = pose.position[0] + (t[hit] * dirs[:, :, 0][hit])
        pts[:, 1] = pose.position[1] + (t[hit] * dirs[:, :, 1][hit])
        hw = self.track.half_width
        dist = self.field.query_banded(pts, hw - MARKING_WIDTH_M, hw)
        on_asphalt = dist <= hw
        on_marking = on_asphalt & (dist >= hw - MARKING_WIDTH_M)

        flat_idx = np.flatnonzero(hit.ravel())
        img_flat = img.reshape(-1, 3)
        img_flat[flat_idx[on_asphalt]] = ASPHALT_RGB
        img_flat[flat_idx[on_marking]] = MARKING_RGB

        arrow_hits = self._paint_arrows(pose, pts, on_asphalt, flat_idx, img_flat)

        mask = np.zeros(h * w, dtype=bool)
        mask[flat_idx[on_marking]] = True
        mask[flat_idx[arrow_hits]] = False
        return img, mask.reshape(h, w)

    def _paint_arrows(
        self,
        pose: CameraPose,
        pts: np.ndarray,
        on_asphalt: np.ndarray,
        flat_idx: np.ndarray,
        img_flat: np.ndarray,
    ) -> np.ndarray:
        """Paint visible arrow triangles; returns hit mask aligned with pts."""
        hits = np.zeros(len(pts), dtype=bool)
        cam_xy = np.array(pose.position[:2])
        near = (
            np.linalg.norm(self._arrow_centers - cam_xy, axis=1)
            <= self.max_distance + 20.0
        )
        cand = np.flatnonzero(on_asphalt)
        if not near.any() or len(cand) == 0:
            return hits
        p = pts[cand]
        for tri in self._triangles[near]:
            lo = tri.min(axis=0) - 1e-9
            hi = tri.max(axis=0) + 1e-9
            box = (
                (p[:, 0] >= lo[0]) & (p[:, 0] <= hi[0]) & (p[:, 1] >= lo[1]) & (p[:, 1] <= hi[1])
            )
            if not box.any():
                continue
            q = p[box]
            s = []
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                s.append((b[0] - a[0]) * (q[:, 1] - a[1]) - (b[1] - a[1]) * (q[:, 0] - a[0]))
            inside = ((s[0] >= 0) & (s[1] >= 0) & (s[2] >= 0)) | (
                (s[0] <= 0) & (s[1] <= 0) & (s[2] <= 0)
            )
            sub = np.flatnonzero(box)[inside]
            hits[cand[sub]] = True
        img_flat[flat_idx[hits]] = ARROW_RGB
        return hits


def render_frame(
    state: VehicleState,
    track: TrackModel,
    line: RacingLine,
    intrinsics: CameraIntrinsics | None = None,
    width: int = 640,
    height: int = 480,
    *,
    frame_id: int = 0,
    source_id: str = "sim",
    renderer: Renderer | None = None,
) -> tuple[Frame, np.ndarray]:
    """One-off render; hold a Renderer yourself when rendering repeatedly."""
    r = renderer or Renderer(track, line, intrinsics, width, height)
    rgb, mask = r.render(state)
    frame = frame_from_array(rgb, id=frame_id, ts_ns=state.t_ns, source_id=source_id)
    return frame, mask


def overlay_blend(base: Frame, overlay: np.ndarray) -> Frame:
    """Alpha-blend an RGBA overlay onto a frame: round((o*a + b*(255-a)) / 255).

    Integer-exact with round-half-up, so a fully transparent overlay is a
    byte-level no-op and a fully opaque one replaces the frame.
    """
    overlay = np.asarray(overlay)
    if overlay.shape != (base.height, base.width, 4):
        raise ValueError("overlay must be (height, width, 4) RGBA")
    b = base.as_array().astype(np.int64)
    o = overlay[:, :, :3].astype(np.int64)
    alpha = overlay[:, :, 3:4].astype(np.int64)
    num = o * alpha + b * (255 - alpha)
    blended = ((2 * num + 255) // 510).astype(np.uint8)
    return base.with_pixels(blended)


# ---------------------------------------------------------------------------
# default track: a stadium course scaled to two miles
# ---------------------------------------------------------------------------


def stadium_track(
    radius: float = 200.0,
    half_width: float = 6.0,
    point_spacing: float = 2.0,
    length: float = TRACK_LENGTH_M,
) -> TrackModel:
    """Closed counterclockwise stadium: two straights joined by semicircles.

    The straight length is chosen to hit the requested total centerline
    length (two miles by default).
    """
    straight = (length - 2.0 * math.pi * radius) / 2.0
    if straight <= 0:
        raise ValueError("radius too large for the target length")
    pts: list[tuple[float, float]] = []

    n = int(math.ceil(straight / point_spacing))
    for i in range(n):
        pts.append((straight * i / n, 0.0))
    m = int(math.ceil(math.pi * radius / point_spacing))
    for i in range(m):
        a = -math.pi / 2 + math.pi * i / m
        pts.append((straight + radius * math.cos(a), radius + radius * math.sin(a)))
    for i in range(n):
        pts.append((straight * (1 - i / n), 2.0 * radius))
    for i in range(m):
        a = math.pi / 2 + math.pi * i / m
        pts.append((radius * math.cos(a), radius + radius * math.sin(a)))
    pts.append(pts[0])

    start_x = min(50.0, straight / 2.0)
    start_line = np.array([[start_x, half_width], [start_x, -half_width]])
    return TrackModel(np.array(pts), half_width, start_line, name="stadium-2mi")


def racing_line_for(track: TrackModel, apex_offset: float = 2.5) -> RacingLine:
    """Centerline-offset heuristic: cut toward the inside on curved sections.

    The offset is proportional to smoothed local curvature, capped at
    apex_offset, and applied along the left normal (the inside of a
    counterclockwise lap).  No optimality claim, just a plausible line.
    """
    pts = track.centerline[:-1]  # open ring
    n = len(pts)
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    v1 = pts - prev
    v2 = nxt - pts
    ang1 = np.arctan2(v1[:, 1], v1[:, 0])
    ang2 = np.arctan2(v2[:, 1], v2[:, 0])
    turn = np.angle(np.exp(1j * (ang2 - ang1)))
    seg = np.linalg.norm(v2, axis=1)
    curvature = turn / np.maximum(seg, 1e-9)
    window = 15
    kernel = np.ones(window) / window
    smooth = np.convolve(np.concatenate([curvature[-window:], curvature, curvature[:window]]), kernel, mode="same")[window:-window]
    offset = np.clip(np.abs(smooth) * 500.0, 0.0, apex_offset)
    heading = np.arctan2(nxt[:, 1] - prev[:, 1], nxt[:, 0] - prev[:, 0])
    left = np.column_stack([-np.sin(heading), np.cos(heading)])
    line = pts + left * (offset * np.sign(smooth))[:, None]
    closed = np.vstack([line, line[:1]])
    return RacingLine(closed)


# ---------------------------------------------------------------------------
# track / racing-line files and trajectory logs
# ---------------------------------------------------------------------------


def save_track(track: TrackModel, line: RacingLine, path: str) -> None:
    doc = {
        "units": "meters",
        "name": track.name,
        "half_width": track.half_width,
        "centerline": track.centerline.tolist(),
        "start_line": track.start_line.tolist(),
        "racing_line": line.polyline.tolist(),
        "arrow_spacing_m": line.arrow_spacing,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_track(path: str) -> tuple[TrackModel, RacingLine]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("units") != "meters":
        raise ValueError(f"{path}: units must be 'meters'")
    track = TrackModel(
        np.array(doc["centerline"], dtype=np.float64),
        float(doc["half_width"]),
        np.array(doc["start_line"], dtype=np.float64),
        name=doc.get("name", "track"),
    )
    if "racing_line" in doc:
        line = RacingLine(
            np.array(doc["racing_line"], dtype=np.float64),
            float(doc.get("arrow_spacing_m", ARROW_SPACING_M)),
        )
    else:
        line = racing_line_for(track)
    return track, line


def default_track() -> tuple[TrackModel, RacingLine]:
    """The track data file shipped with the package."""
    from importlib import resources

    path = resources.files("drivepipe").joinpath("data/track_stadium.json")
    with resources.as_file(path) as p:
        return load_track(str(p))


TRAJECTORY_HEADER = "t_ns,x_m,y_m,speed_mps"


def write_trajectory(traj: Trajectory, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRAJECTORY_HEADER + "\n")
        for t, (x, y), v in zip(traj.t_ns, traj.xy, traj.speed):
            fh.write(f"{int(t)},{float(x)!r},{float(y)!r},{float(v)!r}\n")


def read_trajectory(path: str) -> Trajectory:
    ts: list[int] = []
    xy: list[tuple[float, float]] = []
    speed: list[float] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            if not line.strip():
                continue
            t_text, x_text, y_text, v_text = line.strip().split(",")
            ts.append(int(t_text))
            xy.append((float(x_text), float(y_text)))
            speed.append(float(v_text))
    return Trajectory(
        np.array(ts, dtype=np.int64), np.array(xy, dtype=np.float64), np.array(speed)
    )


# ---------------------------------------------------------------------------
# simulation session
# ---------------------------------------------------------------------------


class SimSession:
    """Deterministic 100 Hz tick loop wrapping vehicle, recorder and renderer.

    Control inputs land asynchronously via apply_control and are sampled once
    per tick, last writer wins.  Rendering is pulled by the consumer at
    whatever rate it can sustain; physics never waits for it.
    """

    def __init__(
        self,
        track: TrackModel,
        line: RacingLine,
        start_state: VehicleState | None = None,
        width: int = 640,
        height: int = 480,
        source_id: str = "sim",
    ):
        self.track = track
        self.line = line
        self.width = width
        self.height = height
        self._renderer: Renderer | None = None  # built on first render
        if start_state is None:
            start_state = self.start_state_on_line()
        self.state = start_state
        self.control = ControlInput()
        self.source_id = source_id
        self._frame_counter = 0
        self._t: list[int] = []
        self._xy: list[tuple[float, float]] = []
        self._speed: list[float] = []

    @property
    def renderer(self) -> Renderer:
        if self._renderer is None:
            self._renderer = Renderer(
                self.track, self.line, width=self.width, height=self.height
            )
        return self._renderer

    def start_state_on_line(self, back_from_start: float = 15.0) -> VehicleState:
        """Spawn on the racing line shortly before the start line."""
        poses = self.line.arrows
        start_mid = self.track.start_line.mean(axis=0)
        dists = np.linalg.norm(poses[:, :2] - start_mid, axis=1)
        k = int(np.argmin(np.where(poses[:, 0] < start_mid[0] - back_from_start / 2, dists, np.inf)))
        if not np.isfinite(dists[k]):
            k = int(np.argmin(dists))
        return VehicleState(poses[k, 0], poses[k, 1], poses[k, 2], 0.0, 0)

    def apply_control(self, control: ControlInput) -> None:
        self.control = control

    def tick(self, n: int = 1) -> VehicleState:
        """Advance physics n ticks of 10 ms, recording one sample per tick."""
        for _ in range(n):
            self.state = step_vehicle(self.state, self.control, TICK_S)
            self._t.append(self.state.t_ns)
            self._xy.append((self.state.x, self.state.y))
            self._speed.append(self.state.speed)
        return self.state

    def render(self) -> tuple[Frame, np.ndarray]:
        frame, mask = render_frame(
            self.state,
            self.track,
            self.line,
            frame_id=self._frame_counter,
            source_id=self.source_id,
            renderer=self.renderer,
        )
        self._frame_counter += 1
        return frame, mask

    def trajectory(self) -> Trajectory:
        return Trajectory(
            np.array(self._t, dtype=np.int64),
            np.array(self._xy, dtype=np.float64),
            np.array(self._speed, dtype=np.float64),
        )
