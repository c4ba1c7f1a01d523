"""Real-time scheduler: source -> conditioning -> stylize -> publish.

Backpressure is a single primitive, the LatestCell: each stage boundary holds
at most one item and a fresh offer replaces a stale one.  Frames that arrive
while the stylizer is busy are coalesced away, which bounds both memory and
end-to-end latency; the cost is an explicit, measured drop rate.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

import numpy as np

from .conditioning import ConditionMap, ThresholdField, canny, canny_spatially_varying
from .frames import Frame, PipelineConfig, frame_from_array, resize_bilinear
from .stylizer import (
    SeedPolicy,
    StyleRequest,
    StyleResult,
    mock_stylize,
    seed_for_frame,
)
from .wire import MetricsSnapshot

NS_PER_MS = 1_000_000
HISTOGRAM_BUCKETS = 1000  # 1 ms wide, saturating at 1 s


class LatestCell:
    """Single-slot exchange cell: offer replaces, take empties.

    Safe for one writer and one reader running concurrently; offer never
    blocks.  offer returns True when it displaced an untaken item, which is
    exactly the coalescing-drop event the pipeline accounts for.
    """

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._item = None
        self._full = False

    def offer(self, item) -> bool:
        with self._cond:
            displaced = self._full
            self._item = item
            self._full = True
            self._cond.notify()
        return displaced

    def take(self):
        """Most recently offered item, or None when empty (non-blocking)."""
        with self._cond:
            if not self._full:
                return None
            item, self._item, self._full = self._item, None, False
            return item

    def take_wait(self, timeout: float):
        with self._cond:
            if not self._full:
                self._cond.wait_for(lambda: self._full, timeout)
            if not self._full:
                return None
            item, self._item, self._full = self._item, None, False
            return item

    def is_empty(self) -> bool:
        with self._cond:
            return not self._full


@dataclass(frozen=True)
class LatencyRecord:
    frame_id: int
    capture_ns: int
    condition_ns: int
    stylize_rtt_ns: int
    publish_ns: int
    end_to_end_ns: int
    dropped: bool = False


class LatencyHistogram:
    """Fixed-bucket latency histogram: 1 ms buckets covering [0, 1 s).

    Samples at or above one second saturate into the last bucket, so reported
    percentiles cap at the histogram range.
    """

    def __init__(self) -> None:
        self.counts = np.zeros(HISTOGRAM_BUCKETS, dtype=np.int64)
        self.total = 0

    def record(self, duration_ns: int) -> None:
        bucket = min(max(duration_ns, 0) // NS_PER_MS, HISTOGRAM_BUCKETS - 1)
        self.counts[bucket] += 1
        self.total += 1

    def percentile(self, q: float) -> int:
        return percentile(self, q)


def percentile(histogram: LatencyHistogram, q: float) -> int:
    """Smallest bucket upper bound (ns) whose cumulative count reaches q*total."""
    if histogram.total == 0:
        raise ValueError("empty histogram")
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    need = q * histogram.total
    cum = 0
    for i, count in enumerate(histogram.counts):
        cum += int(count)
        if cum >= need:
            return (i + 1) * NS_PER_MS
    return HISTOGRAM_BUCKETS * NS_PER_MS


class PipelineControls:
    """Live-tunable knobs shared between the control intake and the dispatcher."""

    def __init__(self, config: PipelineConfig):
        self.enhancement_enabled = config.enhancement_enabled
        self.threshold_field: ThresholdField | None = None
        self.canny_low = config.canny_low
        self.canny_high = config.canny_high
        self.blur_sigma = config.blur_sigma


class PipelineStats:
    """Counters and latency accounting owned by one pipeline run.

    Every frame that enters the source cell ends up in exactly one of:
    coalesced at the source, coalesced at the display cell, timed out, or
    emitted.  The books therefore tell when the pipeline has fully drained.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.offered = 0
        self.coalesced_source = 0
        self.coalesced_display = 0
        self.timeouts = 0
        self.passthrough = 0
        self.emitted = 0
        self.histogram = LatencyHistogram()
        self.records: list[LatencyRecord] = []
        self.first_emit_ns: int | None = None
        self.last_emit_ns: int | None = None
        self._emit_times: list[int] = []
        self._resident = 0
        self.max_resident = 0

    def frame_offered(self, displaced: bool) -> None:
        with self._lock:
            self.offered += 1
            if displaced:
                self.coalesced_source += 1
            else:
                self._resident += 1
                self.max_resident = max(self.max_resident, self._resident)

    def frame_displaced_at_display(self) -> None:
        with self._lock:
            self.coalesced_display += 1
            self._resident -= 1

    def frame_emitted(self, record: LatencyRecord) -> None:
        now = time.monotonic_ns()
        with self._lock:
            self.emitted += 1
            self.records.append(record)
            self.histogram.record(record.end_to_end_ns)
            self._emit_times.append(now)
            if self.first_emit_ns is None:
                self.first_emit_ns = now
            self.last_emit_ns = now
            self._resident -= 1

    def frame_timed_out(self, record: LatencyRecord) -> None:
        with self._lock:
            self.timeouts += 1
            self.records.append(record)
            self._resident -= 1

    def passthrough_served(self) -> None:
        with self._lock:
            self.passthrough += 1

    def in_flight(self) -> int:
        with self._lock:
            return self.offered - (
                self.coalesced_source + self.coalesced_display + self.timeouts + self.emitted
            )

    @property
    def dropped(self) -> int:
        return self.coalesced_source + self.coalesced_display + self.timeouts

    def drop_rate(self) -> float:
        return self.dropped / self.offered if self.offered else 0.0

    def achieved_fps(self) -> float:
        if self.emitted < 2 or self.first_emit_ns is None or self.last_emit_ns is None:
            return 0.0
        span = self.last_emit_ns - self.first_emit_ns
        return (self.emitted - 1) / (span / 1e9) if span else 0.0

    def trailing_fps(self, window_s: float = 3.0) -> float:
        cutoff = time.monotonic_ns() - int(window_s * 1e9)
        with self._lock:
            recent = sum(1 for t in self._emit_times if t >= cutoff)
        return recent / window_s

    def snapshot(self) -> MetricsSnapshot:
        if self.histogram.total == 0:
            return MetricsSnapshot(0.0, self.drop_rate(), 0, 0, 0)
        return MetricsSnapshot(
            achieved_fps=self.trailing_fps(),
            drop_rate=self.drop_rate(),
            p50_ns=self.histogram.percentile(0.50),
            p95_ns=self.histogram.percentile(0.95),
            p99_ns=self.histogram.percentile(0.99),
        )


@dataclass
class StageOutput:
    """One frame's trip through the stages, ready for the publish stage."""

    raw: Frame
    condition: ConditionMap
    styled: Frame
    capture_start_ns: int
    capture_ns: int
    condition_ns: int
    stylize_rtt_ns: int
    passthrough: bool


class StylizeTimeout(RuntimeError):
    """Stylizer did not answer within its deadline; the frame is dropped."""


class StylizerUnavailable(RuntimeError):
    """Stylizer unreachable; the pipeline falls back to passthrough frames."""


Stylizer = Callable[[StyleRequest], StyleResult]


class Sinks:
    """Publish-stage fan-out; any callback may be None."""

    def __init__(
        self,
        on_raw: Callable[[Frame], None] | None = None,
        on_condition: Callable[[ConditionMap], None] | None = None,
        on_styled: Callable[[Frame], None] | None = None,
        on_metrics: Callable[[MetricsSnapshot], None] | None = None,
    ):
        self.on_raw = on_raw
        self.on_condition = on_condition
        self.on_styled = on_styled
        self.on_metrics = on_metrics


def process_frame(
    config: PipelineConfig,
    frame: Frame,
    stylizer: Stylizer,
    policy: SeedPolicy,
    controls: PipelineControls | None = None,
) -> StageOutput:
    """Run one frame through resize, conditioning and stylization.

    Pure apart from the stylizer call itself: identical frames, thresholds and
    seed give byte-identical styled output, which is what makes lockstep
    replay hashable.
    """
    t0 = time.monotonic_ns()
    resized = (
        frame
        if (frame.width, frame.height) == (config.width, config.height)
        else resize_bilinear(frame, config.width, config.height)
    )
    t1 = time.monotonic_ns()
    field_ = controls.threshold_field if controls else None
    low = controls.canny_low if controls else config.canny_low
    high = controls.canny_high if controls else config.canny_high
    sigma = controls.blur_sigma if controls else config.blur_sigma
    if field_ is not None:
        condition = canny_spatially_varying(resized, field_, sigma)
    else:
        condition = canny(resized, low, high, sigma)
    t2 = time.monotonic_ns()
    enhance = controls.enhancement_enabled if controls else config.enhancement_enabled
    if enhance:
        request = StyleRequest(
            frame=resized,
            condition=condition,
            seed=seed_for_frame(policy, resized.id),
            steps=1,
            strength=config.strength,
            style_id=config.style_id,
        )
        result = stylizer(request)
        styled = result.frame
        passthrough = False
    else:
        styled = resized
        passthrough = True
    t3 = time.monotonic_ns()
    return StageOutput(
        raw=resized,
        condition=condition,
        styled=styled,
        capture_start_ns=t0,
        capture_ns=t1 - t0,
        condition_ns=t2 - t1,
        stylize_rtt_ns=0 if passthrough else t3 - t2,
        passthrough=passthrough,
    )


class FramePipeline:
    """Threaded three-stage pipeline connected by LatestCells.

    Stage threads: a caller-driven source side (offer_frame), the dispatch
    loop doing the heavy work, and the publish loop feeding sinks.  At most
    three frames are resident at any instant: one in the source cell, one in
    flight, one awaiting publish.
    """

    def __init__(
        self,
        config: PipelineConfig,
        stylizer: Stylizer | None = None,
        sinks: Sinks | None = None,
        policy: SeedPolicy | None = None,
        metrics_interval_s: float = 0.5,
    ):
        self.config = config
        self.stylizer: Stylizer = stylizer if stylizer is not None else mock_stylize
        self.sinks = sinks or Sinks()
        self.policy = policy or SeedPolicy(session_seed=config.seed)
        self.controls = PipelineControls(config)
        self.stats = PipelineStats()
        self.metrics_interval_s = metrics_interval_s
        self._source_cell: LatestCell = LatestCell()
        self._display_cell: LatestCell = LatestCell()
        self._stop = threading.Event()
        self._source_done = threading.Event()
        self._threads: list[threading.Thread] = []

    # -- source side ---------------------------------------------------------

    def offer_frame(self, frame: Frame) -> None:
        displaced = self._source_cell.offer(frame)
        self.stats.frame_offered(displaced)

    def source_finished(self) -> None:
        self._source_done.set()

    # -- lifecycle -------------------------------------------------------------

    def start(self) -> None:
        for name, target in (
            ("dispatch", self._dispatch_loop),
            ("publish", self._publish_loop),
            ("metrics", self._metrics_loop),
        ):
            t = threading.Thread(target=target, name=f"pipeline-{name}", daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stop.set()

    def join(self, timeout: float | None = None) -> None:
        deadline = None if timeout is None else time.monotonic() + timeout
        for t in self._threads:
            t.join(None if deadline is None else max(0.0, deadline - time.monotonic()))

    def run_until_source_done(self, timeout: float | None = None) -> None:
        """Block until the source is exhausted and every frame is accounted for."""
        self._source_done.wait(timeout)
        while not self._stop.is_set() and self.stats.in_flight() > 0:
            time.sleep(0.005)
        self.stop()
        self.join(5.0)

    # -- stages -----------------------------------------------------------------

    def _dispatch_loop(self) -> None:
        while not self._stop.is_set():
            frame = self._source_cell.take_wait(0.05)
            if frame is None:
                continue
            try:
                output = process_frame(
                    self.config, frame, self.stylizer, self.policy, self.controls
                )
            except StylizeTimeout:
                self.stats.frame_timed_out(
                    LatencyRecord(frame.id, 0, 0, 0, 0, 0, dropped=True)
                )
                continue
            except StylizerUnavailable:
                output = self._passthrough_output(frame)
            if self._display_cell.offer(output):
                self.stats.frame_displaced_at_display()

    def _passthrough_output(self, frame: Frame) -> StageOutput:
        t0 = time.monotonic_ns()
        resized = (
            frame
            if (frame.width, frame.height) == (self.config.width, self.config.height)
            else resize_bilinear(frame, self.config.width, self.config.height)
        )
        condition = canny(
            resized, self.controls.canny_low, self.controls.canny_high, self.controls.blur_sigma
        )
        t1 = time.monotonic_ns()
        self.stats.passthrough_served()
        return StageOutput(
            raw=resized,
            condition=condition,
            styled=resized,
            capture_start_ns=t0,
            capture_ns=0,
            condition_ns=t1 - t0,
            stylize_rtt_ns=0,
            passthrough=True,
        )

    def _publish_loop(self) -> None:
        while not self._stop.is_set():
            output = self._display_cell.take_wait(0.05)
            if output is None:
                continue
            t0 = time.monotonic_ns()
            if self.sinks.on_raw:
                self.sinks.on_raw(output.raw)
            if self.sinks.on_condition:
                self.sinks.on_condition(output.condition)
            if self.sinks.on_styled:
                self.sinks.on_styled(output.styled)
            t1 = time.monotonic_ns()
            record = LatencyRecord(
                frame_id=output.raw.id,
                capture_ns=output.capture_ns,
                condition_ns=output.condition_ns,
                stylize_rtt_ns=output.stylize_rtt_ns,
                publish_ns=t1 - t0,
                end_to_end_ns=t1 - output.capture_start_ns,
            )
            self.stats.frame_emitted(record)

    def _metrics_loop(self) -> None:
        while not self._stop.wait(self.metrics_interval_s):
            if self.sinks.on_metrics and self.stats.emitted:
                self.sinks.on_metrics(self.stats.snapshot())


def run_pipeline(
    config: PipelineConfig,
    source: Iterable[Frame],
    stylizer: Stylizer | None = None,
    sinks: Sinks | None = None,
    policy: SeedPolicy | None = None,
    stop_event: threading.Event | None = None,
) -> PipelineStats:
    """Drive a source through a threaded pipeline until it is exhausted.

    The source iterator is expected to pace itself (its __next__ blocks until
    the next frame is due); coalescing happens in the source cell.
    """
    pipeline = FramePipeline(config, stylizer, sinks, policy)
    pipeline.start()

    def pump() -> None:
        try:
            for frame in source:
                if pipeline._stop.is_set() or (stop_event and stop_event.is_set()):
                    break
                pipeline.offer_frame(frame)
        finally:
            pipeline.source_finished()

    pump_thread = threading.Thread(target=pump, name="pipeline-source", daemon=True)
    pump_thread.start()
    pipeline.run_until_source_done()
    pump_thread.join(5.0)
    return pipeline.stats


def run_lockstep(
    config: PipelineConfig,
    frames: Iterable[Frame],
    stylizer: Stylizer | None = None,
    policy: SeedPolicy | None = None,
    controls: PipelineControls | None = None,
) -> Iterator[StageOutput]:
    """Single-threaded deterministic pass: every frame, no coalescing.

    This is the replay mode used to check cross-frame stability; two runs over
    the same frames with the same seed produce byte-identical styled output.
    """
    stylizer = stylizer if stylizer is not None else mock_stylize
    policy = policy or SeedPolicy(session_seed=config.seed)
    for frame in frames:
        yield process_frame(config, frame, stylizer, policy, controls)


class SyntheticSource:
    """Procedural frame generator paced at a fixed rate, for benchmarks.

    Content is a rolled checker-and-gradient pattern: cheap to produce but
    with real edge content so the conditioning stage does representative work.
    """

    def __init__(
        self,
        n_frames: int,
        fps: float,
        width: int = 640,
        height: int = 480,
        source_id: str = "bench",
        realtime: bool = True,
    ):
        if fps <= 0:
            raise ValueError("fps must be positive")
        self.n_frames = n_frames
        self.fps = fps
        self.width = width
        self.height = height
        self.source_id = source_id
        self.realtime = realtime
        self._template = self._make_template(width, height)

    @staticmethod
    def _make_template(w: int, h: int) -> np.ndarray:
        ys, xs = np.mgrid[0:h, 0:w]
        checker = (((xs // 32) + (ys // 32)) % 2) * 120
        grad = (xs * 255) // max(w - 1, 1)
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
        rgb[:, :, 0] = np.minimum(255, checker + grad // 3)
        rgb[:, :, 1] = np.minimum(255, checker + (ys * 200) // max(h - 1, 1))
        rgb[:, :, 2] = np.minimum(255, 40 + grad // 2)
        return rgb

    def __iter__(self) -> Iterator[Frame]:
        period = 1.0 / self.fps
        start = time.monotonic()
        for i in range(self.n_frames):
            if self.realtime:
                deadline = start + i * period
                now = time.monotonic()
                if deadline > now:
                    time.sleep(deadline - now)
            rolled = np.roll(self._template, shift=(i * 7) % self.width, axis=1)
            yield frame_from_array(
                rolled, id=i, ts_ns=time.monotonic_ns(), source_id=self.source_id
            )
