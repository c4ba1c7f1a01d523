"""Task-performance metrics: lap extraction and trajectory-vs-line scoring.

Conventions, fixed so reports are reproducible from raw logs:
- laps are delimited by directed start-line crossings (segment rotated +90
  degrees counterclockwise gives the travel direction); the first lap is
  warmup and only the second lap of a session is scored
- the Frechet distance is the discrete one over the raw sample sequences
- the area between curves resamples both to n points uniformly by arc length
  (consecutive duplicate points dropped first) and sums unsigned quadrilateral
  areas of matched index pairs
- spreads are population standard deviations
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .simworld import RacingLine, Trajectory

MPS_TO_KMH = 3.6


@dataclass(frozen=True)
class LapSet:
    laps: list[Trajectory]
    warmup_excluded: bool = True

    @property
    def scoring_laps(self) -> list[Trajectory]:
        return self.laps[1:] if self.warmup_excluded else self.laps

    @property
    def second_lap(self) -> Trajectory:
        if len(self.laps) < 2:
            raise ValueError("no scoring lap: session has fewer than 2 laps")
        return self.laps[1]


def _cross(o: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def crossing_direction(p0, p1, line: np.ndarray) -> int:
    """+1 / -1 when segment p0->p1 properly crosses the line with/against its
    travel direction, 0 when it does not cross."""
    a, b = np.asarray(line[0], dtype=float), np.asarray(line[1], dtype=float)
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    d1 = _cross(a, b, p0)
    d2 = _cross(a, b, p1)
    d3 = _cross(p0, p1, a)
    d4 = _cross(p0, p1, b)
    if not (d1 * d2 < 0 and d3 * d4 < 0):
        return 0
    ab = b - a
    normal = np.array([-ab[1], ab[0]])  # +90 deg ccw: the travel direction
    step = p1 - p0
    dot = step @ normal
    if dot > 0:
        return 1
    if dot < 0:
        return -1
    return 0


def crossing_indices(traj: Trajectory, start_line: np.ndarray) -> list[int]:
    """Sample indices i where segment (i, i+1) crosses in travel direction."""
    out = []
    xy = traj.xy
    for i in range(len(xy) - 1):
        if crossing_direction(xy[i], xy[i + 1], start_line) > 0:
            out.append(i)
    return out


def _slice_traj(traj: Trajectory, start: int, stop: int) -> Trajectory:
    return Trajectory(traj.t_ns[start:stop], traj.xy[start:stop], traj.speed[start:stop])


def split_laps(traj: Trajectory, start_line: np.ndarray) -> LapSet:
    """Segment a session at directed start-line crossings.

    A lap runs from the first sample after one crossing up to and including
    the first sample after the next; data before the first crossing and after
    the last is discarded.  Needs at least two crossings.
    """
    crossings = crossing_indices(traj, start_line)
    if len(crossings) < 2:
        raise ValueError(
            f"incomplete session: {len(crossings)} directed start-line crossings, need >= 2"
        )
    laps = [
        _slice_traj(traj, crossings[k] + 1, crossings[k + 1] + 2)
        for k in range(len(crossings) - 1)
    ]
    return LapSet(laps=laps, warmup_excluded=True)


def discrete_frechet(p: np.ndarray, q: np.ndarray) -> float:
    """Discrete Frechet distance between point sequences (Euclidean metric).

    Dynamic program over the coupling table, evaluated along anti-diagonals so
    the whole thing vectorizes; memory stays at two diagonals.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("polylines must be nonempty")
    if p.ndim != 2 or q.ndim != 2 or p.shape[1] != 2 or q.shape[1] != 2:
        raise ValueError("polylines must be (N, 2) arrays")
    np_, nq = len(p), len(q)
    prev2: np.ndarray | None = None  # diagonal k-2
    prev: np.ndarray | None = None  # diagonal k-1
    lo_prev = 0
    for k in range(np_ + nq - 1):
        lo = max(0, k - (nq - 1))
        hi = min(np_ - 1, k)
        ii = np.arange(lo, hi + 1)
        jj = k - ii
        d = np.sqrt(((p[ii] - q[jj]) ** 2).sum(axis=1))
        if k == 0:
            cur = d
        else:
            up = np.full(len(ii), np.inf)  # c[i-1, j]
            left = np.full(len(ii), np.inf)  # c[i, j-1]
            diag = np.full(len(ii), np.inf)  # c[i-1, j-1]
            # previous diagonal holds rows lo_prev .. lo_prev + len(prev) - 1
            pi = ii - 1 - lo_prev
            ok = (pi >= 0) & (pi < len(prev))
            up[ok] = prev[pi[ok]]
            pi = ii - lo_prev
            ok = (pi >= 0) & (pi < len(prev)) & (jj >= 1)
            left[ok] = prev[pi[ok]]
            if prev2 is not None:
                pi = ii - 1 - lo_prev2
                ok = (pi >= 0) & (pi < len(prev2)) & (ii >= 1) & (jj >= 1)
                diag[ok] = prev2[pi[ok]]
            cur = np.maximum(d, np.minimum(np.minimum(up, left), diag))
        prev2, lo_prev2 = prev, lo_prev
        prev, lo_prev = cur, lo
    return float(prev[-1] if np_ - 1 >= lo_prev else prev[0])


def _dedupe(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    keep = np.concatenate(([True], seg > 0.0))
    return points[keep]


def resample_by_arclength(points: np.ndarray, n: int) -> np.ndarray:
    """n points uniformly spaced by arc length, endpoints included."""
    if n < 2:
        raise ValueError("resample count must be >= 2")
    pts = _dedupe(np.asarray(points, dtype=np.float64))
    if len(pts) < 2:
        raise ValueError("degenerate zero-length curve")
    seg = np.diff(pts, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    total = cum[-1]
    targets = np.arange(n, dtype=np.float64) * (total / (n - 1))
    idx = np.clip(np.searchsorted(cum, targets, side="right") - 1, 0, len(seg) - 1)
    frac = (targets - cum[idx]) / seg_len[idx]
    return pts[idx] + seg[idx] * frac[:, None]


def area_between(p: np.ndarray, q: np.ndarray, n: int = 200) -> float:
    """Total unsigned area of matched-index quadrilaterals between two curves.

    Both curves are resampled to n points by arc length; quad i is
    (p_i, p_{i+1}, q_{i+1}, q_i) and contributes its absolute shoelace area.
    """
    rp = resample_by_arclength(p, n)
    rq = resample_by_arclength(q, n)
    # fan triangulation from the first vertex is algebraically the shoelace
    # sum but cancels exactly when a quad degenerates (identical curves -> 0)
    e12 = rp[1:] - rp[:-1]
    e13 = rq[1:] - rp[:-1]
    e14 = rq[:-1] - rp[:-1]
    twice = (e12[:, 0] * e13[:, 1] - e12[:, 1] * e13[:, 0]) + (
        e13[:, 0] * e14[:, 1] - e13[:, 1] * e14[:, 0]
    )
    return float(np.abs(twice * 0.5).sum())


def speed_stats(laps: LapSet) -> tuple[float, float]:
    """(mean, population std) of the scoring lap's speeds, in km/h."""
    lap = laps.second_lap
    if len(lap) == 0:
        raise ValueError("scoring lap is empty")
    v = lap.speed * MPS_TO_KMH
    return float(v.mean()), float(v.std())


def format_speed(mean_kmh: float, std_kmh: float) -> str:
    """Report phrasing for a speed aggregate, e.g. 'mean=48.43 km/h, std=1.93'."""
    return f"mean={mean_kmh:.2f} km/h, std={std_kmh:.2f}"


@dataclass(frozen=True)
class ConditionStats:
    condition: str
    n_sessions: int
    frechet_m: tuple[float, float]  # (mean, std)
    area_m2: tuple[float, float]
    speed_kmh: tuple[float, float]


@dataclass(frozen=True)
class EvalReport:
    conditions: dict[str, ConditionStats]
    n_participants: int

    def to_csv(self) -> str:
        lines = ["condition,metric,mean,std"]
        for name in sorted(self.conditions):
            st = self.conditions[name]
            for metric, (mean, std) in (
                ("frechet_m", st.frechet_m),
                ("area_m2", st.area_m2),
                ("speed_kmh", st.speed_kmh),
            ):
                lines.append(f"{name},{metric},{mean!r},{std!r}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        header = f"{'condition':<10} {'n':>3} {'frechet [m]':>24} {'area [m^2]':>26} {'speed [km/h]':>28}"
        rows = [header, "-" * len(header)]
        for name in sorted(self.conditions):
            st = self.conditions[name]
            cells = [
                f"mean={m:.2f}, std={s:.2f}"
                for m, s in (st.frechet_m, st.area_m2, st.speed_kmh)
            ]
            rows.append(
                f"{name:<10} {st.n_sessions:>3} {cells[0]:>24} {cells[1]:>26} {cells[2]:>28}"
            )
        return "\n".join(rows) + "\n"


def align_closed_line(polyline: np.ndarray, start_point: np.ndarray) -> np.ndarray:
    """Rotate a closed polyline so it starts at the vertex nearest start_point.

    Both Frechet and area couple curve endpoints, so a lap has to be compared
    against one full loop of the line beginning where the lap begins.
    """
    polyline = np.asarray(polyline, dtype=np.float64)
    if not np.allclose(polyline[0], polyline[-1]):
        return polyline
    ring = polyline[:-1]
    k = int(np.argmin(((ring - np.asarray(start_point)) ** 2).sum(axis=1)))
    rolled = np.roll(ring, -k, axis=0)
    return np.vstack([rolled, rolled[:1]])


def score_session(
    traj: Trajectory,
    racing_line: RacingLine,
    start_line: np.ndarray,
    resample_n: int = 200,
) -> tuple[float, float, tuple[float, float]]:
    """(frechet_m, area_m2, (speed_mean_kmh, speed_std_kmh)) of the second lap."""
    laps = split_laps(traj, start_line)
    lap = laps.second_lap
    line = align_closed_line(racing_line.polyline, lap.xy[0])
    frechet = discrete_frechet(lap.xy, line)
    area = area_between(lap.xy, line, resample_n)
    speed = speed_stats(laps)
    return frechet, area, speed


def make_report(
    sessions: list[tuple[str, Trajectory]],
    racing_line: RacingLine,
    start_line: np.ndarray,
    resample_n: int = 200,
) -> EvalReport:
    """Score every session against the racing line and aggregate per condition."""
    if not sessions:
        raise ValueError("no sessions to evaluate")
    per_condition: dict[str, list[tuple[float, float, float]]] = {}
    for idx, (condition, traj) in enumerate(sessions):
        try:
            frechet, area, (speed_mean, _) = score_session(
                traj, racing_line, start_line, resample_n
            )
        except ValueError as exc:
            raise ValueError(f"session {idx} ({condition}): {exc}") from None
        per_condition.setdefault(condition, []).append((frechet, area, speed_mean))
    stats: dict[str, ConditionStats] = {}
    for condition, values in per_condition.items():
        arr = np.array(values, dtype=np.float64)
        stats[condition] = ConditionStats(
            condition=condition,
            n_sessions=len(values),
            frechet_m=(float(arr[:, 0].mean()), float(arr[:, 0].std())),
            area_m2=(float(arr[:, 1].mean()), float(arr[:, 1].std())),
            speed_kmh=(float(arr[:, 2].mean()), float(arr[:, 2].std())),
        )
    return EvalReport(conditions=stats, n_participants=max(len(v) for v in per_condition.values()))
