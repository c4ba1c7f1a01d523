from __future__ import annotations

import numpy as np
import pytest

from drivepipe.frames import (
    GRAY8,
    Frame,
    FrameManifest,
    ManifestError,
    PipelineConfig,
    frame_from_array,
    load_manifest,
    read_ppm,
    resize_bilinear,
    sample_uniform,
    save_manifest,
    write_ppm,
)


def make_manifest(tmp_path, lines: list[str]) -> str:
    path = tmp_path / "frames.manifest"
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return str(path)


class TestFrame:
    def test_pixel_length_enforced(self):
        with pytest.raises(ValueError, match="expected 12"):
            Frame(0, 0, 2, 2, 0, b"\x00" * 11)

    def test_gray_frame_length(self):
        f = Frame(0, 0, 2, 2, GRAY8, b"\x00" * 4)
        assert f.channels == 1

    def test_array_round_trip(self, rng):
        arr = rng.integers(0, 256, (5, 7, 3), dtype=np.uint8)
        f = frame_from_array(arr, id=3, ts_ns=9, source_id="t")
        assert np.array_equal(f.as_array(), arr)


class TestManifest:
    def test_empty_file(self, tmp_path):
        m = load_manifest(make_manifest(tmp_path, []))
        assert len(m) == 0

    def test_sorted_entries_kept_in_order(self, tmp_path):
        m = load_manifest(make_manifest(tmp_path, ["a.ppm\t10", "b.ppm\t20", "c.ppm\t30"]))
        assert [e[0] for e in m.entries] == ["a.ppm", "b.ppm", "c.ppm"]

    def test_unsorted_entries_sorted_by_ts(self, tmp_path):
        m = load_manifest(make_manifest(tmp_path, ["b.ppm\t20", "a.ppm\t10"]))
        assert [e[1] for e in m.entries] == [10, 20]

    def test_non_numeric_timestamp_names_line(self, tmp_path):
        path = make_manifest(tmp_path, ["a.ppm\t10", "b.ppm\toops"])
        with pytest.raises(ManifestError, match="line 2"):
            load_manifest(path)

    def test_duplicate_path_rejected(self, tmp_path):
        path = make_manifest(tmp_path, ["a.ppm\t10", "a.ppm\t20"])
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ManifestError, match="not found"):
            load_manifest(str(tmp_path / "nope.manifest"))

    def test_save_load_round_trip(self, tmp_path):
        m = FrameManifest((("x.ppm", 5), ("y.ppm", 6)))
        out = tmp_path / "out.manifest"
        save_manifest(m, str(out))
        again = load_manifest(str(out))
        assert again.entries == m.entries


class TestSampleUniform:
    def test_k_zero(self):
        m = FrameManifest(tuple((f"{i}.ppm", i) for i in range(4)))
        assert len(sample_uniform(m, 0)) == 0

    def test_k_equals_n_is_identity(self):
        m = FrameManifest(tuple((f"{i}.ppm", i) for i in range(6)))
        assert sample_uniform(m, 6).entries == m.entries

    def test_stride_formula_n10_k5(self):
        m = FrameManifest(tuple((f"{i}.ppm", i) for i in range(10)))
        picked = sample_uniform(m, 5)
        assert [ts for _, ts in picked.entries] == [0, 2, 4, 6, 8]

    def test_indices_strictly_increasing(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 40))
            k = int(rng.integers(1, n + 1))
            m = FrameManifest(tuple((f"{i}.ppm", i) for i in range(n)))
            ts = [e[1] for e in sample_uniform(m, k).entries]
            assert len(ts) == k
            assert all(a < b for a, b in zip(ts, ts[1:]))

    def test_k_too_large(self):
        m = FrameManifest((("a.ppm", 1),))
        with pytest.raises(ValueError):
            sample_uniform(m, 2)


class TestResize:
    def test_identity_is_byte_exact(self, rng):
        arr = rng.integers(0, 256, (12, 9, 3), dtype=np.uint8)
        f = frame_from_array(arr)
        assert resize_bilinear(f, 9, 12).pixels == f.pixels

    def test_2x2_block_down_to_1x1_rounds_half_up(self):
        arr = np.array(
            [[[0, 0, 0], [0, 0, 0]], [[255, 255, 255], [255, 255, 255]]], dtype=np.uint8
        )
        out = resize_bilinear(frame_from_array(arr), 1, 1)
        assert out.as_array()[0, 0].tolist() == [128, 128, 128]

    def test_constant_image_is_fixed_point(self):
        f = frame_from_array(np.full((8, 6, 3), 100, dtype=np.uint8))
        for w, h in ((3, 3), (17, 5), (6, 8), (13, 29)):
            out = resize_bilinear(f, w, h)
            assert (out.as_array() == 100).all(), (w, h)

    def test_identity_preserved_for_id_and_ts(self):
        f = frame_from_array(np.zeros((4, 4, 3), dtype=np.uint8), id=7, ts_ns=11)
        out = resize_bilinear(f, 8, 8)
        assert (out.id, out.ts_ns) == (7, 11)

    def test_zero_dimension_rejected(self):
        f = frame_from_array(np.zeros((4, 4, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            resize_bilinear(f, 0, 4)

    def test_gray_resize(self):
        f = frame_from_array(np.full((4, 4), 77, dtype=np.uint8))
        assert (resize_bilinear(f, 2, 2).as_array() == 77).all()


class TestPpm:
    def test_round_trip_is_byte_exact(self, tmp_path, rng):
        arr = rng.integers(0, 256, (6, 5, 3), dtype=np.uint8)
        f = frame_from_array(arr, id=2, ts_ns=4)
        path = str(tmp_path / "f.ppm")
        write_ppm(f, path)
        again = read_ppm(path, id=2, ts_ns=4)
        assert again.pixels == f.pixels
        assert (again.width, again.height, again.format) == (5, 6, 0)

    def test_gray_round_trip(self, tmp_path, rng):
        arr = rng.integers(0, 256, (3, 4), dtype=np.uint8)
        path = str(tmp_path / "g.pgm")
        write_ppm(frame_from_array(arr), path)
        assert np.array_equal(read_ppm(path).as_array(), arr)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n4 4\n255\n\x00\x00")
        with pytest.raises(ValueError, match="truncated"):
            read_ppm(str(path))


class TestPipelineConfig:
    def test_defaults_valid(self):
        cfg = PipelineConfig()
        assert (cfg.width, cfg.height) == (640, 480)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"width": 63, "height": 480},
            {"width": 641, "height": 480},
            {"target_fps": 0},
            {"canny_low": 160.0, "canny_high": 150.0},
            {"canny_low": 150.0, "canny_high": 150.0},
            {"canny_low": -1.0},
            {"canny_high": 256.0},
        ],
    )
    def test_invalid_configs_rejected(self, kwargs):
        with pytest.raises(ValueError):
            PipelineConfig(**kwargs)
