from __future__ import annotations

import json
import os
import socket
import subprocess
import sys
import time

import numpy as np
import pytest

from drivepipe.cli import EXIT_DATA, EXIT_TRACK, EXIT_USAGE, main
from drivepipe.frames import frame_from_array, load_manifest, write_ppm
from drivepipe.remote import remote_stylize
from drivepipe.simworld import (
    racing_line_for,
    save_track,
    stadium_track,
    write_trajectory,
)
from drivepipe.stylizer import mock_stylize

from autopilot import drive_laps


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def make_frame_fixtures(tmp_path, n: int = 6, size: int = 96) -> str:
    rng = np.random.default_rng(7)
    lines = []
    for i in range(n):
        arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        arr[:, : size // 2, 0] = 255  # strong vertical edge content
        name = f"frame_{i:03d}.ppm"
        write_ppm(frame_from_array(arr, id=i), str(tmp_path / name))
        lines.append(f"{name}\t{i * 100_000_000}")
    manifest = tmp_path / "frames.manifest"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return str(manifest)


class TestParser:
    @pytest.mark.parametrize(
        "argv",
        [["--help"]] + [[cmd, "--help"] for cmd in ("run", "bench", "replay", "eval", "sample", "worker-mock")],
    )
    def test_help_exits_zero(self, argv, capsys):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 0

    def test_unknown_flag_exits_64(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["bench", "--bogus-flag"])
        assert exc.value.code == EXIT_USAGE

    def test_unknown_subcommand_exits_64(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == EXIT_USAGE


class TestSample:
    def test_stride_sampling_copies_files(self, tmp_path, capsys):
        manifest = make_frame_fixtures(tmp_path, n=10, size=96)
        out_dir = tmp_path / "sampled"
        assert main(["sample", "--manifest", manifest, "-k", "5", "--out", str(out_dir)]) == 0
        sampled = load_manifest(str(out_dir / "manifest.txt"))
        names = [rel for rel, _ in sampled.entries]
        assert names == [f"frame_{i:03d}.ppm" for i in (0, 2, 4, 6, 8)]
        for name in names:
            assert (out_dir / name).exists()

    def test_oversample_fails(self, tmp_path):
        manifest = make_frame_fixtures(tmp_path, n=3)
        assert main(["sample", "--manifest", manifest, "-k", "9", "--out", str(tmp_path / "o")]) == EXIT_DATA


class TestReplay:
    def run_replay(self, manifest: str, seed: int, capsys) -> str:
        code = main(
            ["replay", "--manifest", manifest, "--seed", str(seed), "--resolution", "96x96"]
        )
        assert code == 0
        out = capsys.readouterr().out
        return next(line.split()[1] for line in out.splitlines() if line.startswith("sha256:"))

    def test_lockstep_hash_deterministic(self, tmp_path, capsys):
        manifest = make_frame_fixtures(tmp_path)
        h1 = self.run_replay(manifest, 42, capsys)
        h2 = self.run_replay(manifest, 42, capsys)
        assert h1 == h2

    def test_seed_changes_hash(self, tmp_path, capsys):
        manifest = make_frame_fixtures(tmp_path)
        assert self.run_replay(manifest, 42, capsys) != self.run_replay(manifest, 43, capsys)

    def test_out_dir_gets_frames(self, tmp_path, capsys):
        manifest = make_frame_fixtures(tmp_path, n=3)
        out_dir = tmp_path / "styled"
        assert main(
            [
                "replay",
                "--manifest",
                manifest,
                "--out",
                str(out_dir),
                "--resolution",
                "96x96",
            ]
        ) == 0
        assert sorted(os.listdir(out_dir)) == [f"styled_{i:06d}.ppm" for i in range(3)]

    def test_bad_manifest_exits_data(self, tmp_path):
        bad = tmp_path / "bad.manifest"
        bad.write_text("whoops no tab\n", encoding="utf-8")
        assert main(["replay", "--manifest", str(bad)]) == EXIT_DATA


class TestBench:
    def test_zero_frames_empty_report(self, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        assert main(["bench", "--frames", "0", "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["frames_offered"] == 0

    def test_small_bench_reports_metrics(self, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        code = main(
            [
                "bench",
                "--frames",
                "20",
                "--resolution",
                "64x64",
                "--fps",
                "60",
                "--report",
                str(report_path),
            ]
        )
        assert code == 0
        report = json.loads(report_path.read_text())
        assert report["frames_emitted"] > 0
        assert report["p99_ms"] >= report["p50_ms"]
        assert report["max_resident_frames"] <= 3

    def test_remote_unreachable_exits_4(self):
        assert main(
            ["bench", "--frames", "5", "--stylizer", "remote", "--worker", "127.0.0.1:1"]
        ) == 4


class TestEval:
    def test_eval_matches_library_report(self, tmp_path, capsys):
        track = stadium_track(radius=30.0, half_width=5.0, length=400.0)
        line = racing_line_for(track, apex_offset=1.5)
        track_path = tmp_path / "track.json"
        save_track(track, line, str(track_path))
        sessions = tmp_path / "sessions"
        sessions.mkdir()
        for condition, speed in (("A", 10.5), ("B", 11.5)):
            traj = drive_laps(track, line, n_laps=2, target_speed=speed)
            write_trajectory(traj, str(sessions / f"{condition}_001.csv"))
        out_csv = tmp_path / "report.csv"
        code = main(
            [
                "eval",
                "--sessions",
                str(sessions),
                "--racing-line",
                str(track_path),
                "--out",
                str(out_csv),
            ]
        )
        assert code == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "condition,metric,mean,std"
        rows = {tuple(l.split(",")[:2]): l.split(",")[2:] for l in lines[1:]}
        assert ("A", "frechet_m") in rows and ("B", "speed_kmh") in rows
        # faster condition shows a higher mean speed in the report
        assert float(rows[("B", "speed_kmh")][0]) > float(rows[("A", "speed_kmh")][0])

    def test_missing_racing_line_exits_3(self, tmp_path):
        assert main(
            ["eval", "--sessions", str(tmp_path), "--racing-line", str(tmp_path / "nope.json")]
        ) == EXIT_TRACK

    def test_empty_sessions_dir_exits_data(self, tmp_path):
        track = stadium_track(radius=30.0, half_width=5.0, length=400.0)
        track_path = tmp_path / "track.json"
        save_track(track, racing_line_for(track), str(track_path))
        empty = tmp_path / "none"
        empty.mkdir()
        assert main(
            ["eval", "--sessions", str(empty), "--racing-line", str(track_path)]
        ) == EXIT_DATA


class TestRun:
    def test_missing_track_exits_3(self):
        assert main(["run", "--track", "/definitely/not/here.json"]) == EXIT_TRACK

    def test_short_live_run_writes_trajectory(self, tmp_path):
        env = dict(os.environ)
        env["DRIVE_BROKER_ADDR"] = f"127.0.0.1:{free_port()}"
        traj_path = tmp_path / "session.csv"
        proc = subprocess.run(
            [
                sys.executable,
                "-m",
                "drivepipe.cli",
                "run",
                "--duration",
                "1.5",
                "--fps",
                "4",
                "--console-port",
                str(free_port()),
                "--traj-out",
                str(traj_path),
            ],
            capture_output=True,
            text=True,
            timeout=90,
            env=env,
        )
        assert proc.returncode == 0, proc.stderr
        assert traj_path.exists()
        content = traj_path.read_text().splitlines()
        assert content[0] == "t_ns,x_m,y_m,speed_mps"
        assert len(content) > 50


class TestWorkerMockCli:
    def test_cross_process_worker_matches_local(self, tmp_path):
        port = free_port()
        proc = subprocess.Popen(
            [sys.executable, "-m", "drivepipe.cli", "worker-mock", "--listen", f"127.0.0.1:{port}"],
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
        )
        try:
            deadline = time.monotonic() + 10.0
            while time.monotonic() < deadline:
                try:
                    with socket.create_connection(("127.0.0.1", port), timeout=0.2):
                        break
                except OSError:
                    time.sleep(0.05)
            else:
                raise AssertionError("worker-mock never came up")
            from test_remote import sample_request

            req = sample_request()
            remote = remote_stylize(f"127.0.0.1:{port}", req, timeout_s=5.0)
            assert remote.frame.pixels == mock_stylize(req).frame.pixels
        finally:
            proc.terminate()
            proc.wait(timeout=10)
