from __future__ import annotations

import threading
import time

import pytest

from drivepipe.frames import PipelineConfig
from drivepipe.pipeline import (
    FramePipeline,
    LatencyHistogram,
    LatestCell,
    PipelineControls,
    Sinks,
    SyntheticSource,
    percentile,
    process_frame,
    run_lockstep,
    run_pipeline,
)
from drivepipe.stylizer import SeedPolicy, StyleResult, StyleTimings, mock_stylize


def small_config(**kwargs) -> PipelineConfig:
    defaults = dict(width=64, height=64, target_fps=30.0)
    defaults.update(kwargs)
    return PipelineConfig(**defaults)


def identity_stylizer(req) -> StyleResult:
    return StyleResult(frame=req.frame, timings=StyleTimings(0, 0, 0, 0), worker_id="id")


class TestLatestCell:
    def test_replacement_semantics(self):
        cell = LatestCell()
        assert cell.offer("f1") is False
        assert cell.offer("f2") is True
        assert cell.take() == "f2"
        assert cell.take() is None

    def test_fresh_cell_empty(self):
        assert LatestCell().take() is None

    def test_thousand_offers_keep_only_newest(self):
        cell = LatestCell()
        for i in range(1000):
            cell.offer(i)
        assert cell.take() == 999
        assert cell.take() is None

    def test_take_wait_blocks_until_offer(self):
        cell = LatestCell()
        got = []

        def producer():
            time.sleep(0.05)
            cell.offer("x")

        t = threading.Thread(target=producer)
        t.start()
        got.append(cell.take_wait(1.0))
        t.join()
        assert got == ["x"]

    def test_concurrent_writer_reader(self):
        cell = LatestCell()
        n = 5000
        seen = []

        def writer():
            for i in range(n):
                cell.offer(i)

        def reader():
            last = -1
            while last != n - 1:
                item = cell.take_wait(1.0)
                if item is not None:
                    assert item > last  # newest-wins never goes backwards
                    last = item
                    seen.append(item)

        wt = threading.Thread(target=writer)
        rt = threading.Thread(target=reader)
        rt.start()
        wt.start()
        wt.join()
        cell.offer(n - 1)
        rt.join(5.0)
        assert seen and seen[-1] == n - 1


class TestHistogramPercentile:
    def test_single_sample_five_ms(self):
        hist = LatencyHistogram()
        hist.record(5_000_000)
        assert percentile(hist, 0.5) == 6_000_000
        assert percentile(hist, 0.99) == 6_000_000

    def test_uniform_1_to_100_ms(self):
        hist = LatencyHistogram()
        for ms in range(1, 101):
            hist.record(ms * 1_000_000)
        assert abs(percentile(hist, 0.5) - 51_000_000) <= 1_000_000
        assert abs(percentile(hist, 0.99) - 100_000_000) <= 1_000_000

    def test_empty_histogram_rejected(self):
        with pytest.raises(ValueError):
            percentile(LatencyHistogram(), 0.5)

    def test_q_bounds(self):
        hist = LatencyHistogram()
        hist.record(0)
        for q in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                percentile(hist, q)

    def test_saturation_at_one_second(self):
        hist = LatencyHistogram()
        hist.record(5_000_000_000)
        assert percentile(hist, 0.5) == 1_000_000_000

    def test_monotone_percentiles(self, rng):
        hist = LatencyHistogram()
        for _ in range(500):
            hist.record(int(rng.integers(0, 400_000_000)))
        p50, p95, p99 = (percentile(hist, q) for q in (0.5, 0.95, 0.99))
        assert p50 <= p95 <= p99


def source_frames(n: int, size: int = 64):
    src = SyntheticSource(n, fps=1000.0, width=size, height=size, realtime=False)
    return list(src)


class TestProcessFrame:
    def test_passthrough_matches_resized_raw(self):
        config = small_config(enhancement_enabled=False)
        frame = source_frames(1)[0]
        out = process_frame(config, frame, mock_stylize, SeedPolicy(42))
        assert out.passthrough
        assert out.styled.pixels == out.raw.pixels

    def test_enhanced_differs_from_raw(self):
        config = small_config()
        frame = source_frames(1)[0]
        out = process_frame(config, frame, mock_stylize, SeedPolicy(42))
        assert not out.passthrough
        assert out.styled.pixels != out.raw.pixels

    def test_controls_toggle_takes_effect_next_frame(self):
        config = small_config()
        controls = PipelineControls(config)
        frame = source_frames(1)[0]
        styled = process_frame(config, frame, mock_stylize, SeedPolicy(42), controls)
        controls.enhancement_enabled = False
        passthrough = process_frame(config, frame, mock_stylize, SeedPolicy(42), controls)
        assert not styled.passthrough and passthrough.passthrough


class TestLockstep:
    def test_two_runs_byte_identical(self):
        config = small_config(seed=7)
        frames = source_frames(6)
        a = [o.styled.pixels for o in run_lockstep(config, frames)]
        b = [o.styled.pixels for o in run_lockstep(config, frames)]
        assert a == b

    def test_seed_changes_output(self):
        frames = source_frames(3)
        a = [o.styled.pixels for o in run_lockstep(small_config(seed=7), frames)]
        b = [o.styled.pixels for o in run_lockstep(small_config(seed=8), frames)]
        assert a != b

    def test_every_frame_processed_in_order(self):
        frames = source_frames(5)
        ids = [o.styled.id for o in run_lockstep(small_config(), frames)]
        assert ids == [0, 1, 2, 3, 4]


class TestThreadedPipeline:
    def test_no_drops_with_cheap_stylizer_at_low_rate(self):
        config = small_config()
        source = SyntheticSource(30, fps=60.0, width=64, height=64)
        stats = run_pipeline(config, source, identity_stylizer)
        assert stats.offered == 30
        assert stats.emitted == 30
        assert stats.dropped == 0

    def test_output_ids_strictly_increase(self):
        config = small_config()
        seen = []
        sinks = Sinks(on_styled=lambda f: seen.append(f.id))
        source = SyntheticSource(40, fps=200.0, width=64, height=64)

        def slow(req):
            time.sleep(0.01)
            return identity_stylizer(req)

        run_pipeline(config, source, slow, sinks)
        assert seen == sorted(seen)
        assert len(set(seen)) == len(seen)

    def test_resident_frames_bounded(self):
        config = small_config()
        source = SyntheticSource(60, fps=500.0, width=64, height=64)

        def slow(req):
            time.sleep(0.005)
            return identity_stylizer(req)

        stats = run_pipeline(config, source, slow)
        assert stats.max_resident <= 3
        assert stats.offered == 60
        assert stats.emitted + stats.dropped == 60

    def test_passthrough_flag_gives_byte_identical_streams(self):
        config = small_config(enhancement_enabled=False)
        outputs = []
        sinks = Sinks(
            on_raw=lambda f: outputs.append(("raw", f.pixels)),
            on_styled=lambda f: outputs.append(("styled", f.pixels)),
        )
        source = SyntheticSource(10, fps=100.0, width=64, height=64)
        run_pipeline(config, source, identity_stylizer, sinks)
        raws = [p for kind, p in outputs if kind == "raw"]
        styled = [p for kind, p in outputs if kind == "styled"]
        assert raws == styled

    def test_metrics_snapshot_sane_after_run(self):
        config = small_config()
        pipeline = FramePipeline(config, identity_stylizer)
        pipeline.start()
        for frame in source_frames(5):
            pipeline.offer_frame(frame)
            time.sleep(0.01)
        pipeline.source_finished()
        pipeline.run_until_source_done(2.0)
        snap = pipeline.stats.snapshot()
        assert snap.p50_ns <= snap.p95_ns <= snap.p99_ns
        assert snap.achieved_fps >= 0.0
