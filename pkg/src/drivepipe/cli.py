"""Operator entry points: run, replay, bench, eval, sample, worker-mock.

Exit codes: 0 success, 2 port in use, 3 bad track file, 4 remote worker
unreachable, 5 bad input data, 64 usage errors.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import shutil
import signal
import socket
import sys
import threading
import time

from . import __version__, wire
from .bridge import DEFAULT_BRIDGE_PORT, ConsoleBridge
from .broker import Broker, Publisher, Subscription, broker_address
from .frames import (
    Frame,
    PipelineConfig,
    load_manifest,
    read_ppm,
    sample_uniform,
    save_manifest,
    write_ppm,
)
from .pipeline import (
    FramePipeline,
    Sinks,
    SyntheticSource,
    run_lockstep,
    run_pipeline,
)
from .remote import RemoteStylizer, WorkerServer
from .simworld import (
    ControlInput,
    SimSession,
    default_track,
    load_track,
    read_trajectory,
    write_trajectory,
)
from .stylizer import mock_stylize

EXIT_OK = 0
EXIT_PORT = 2
EXIT_TRACK = 3
EXIT_REMOTE = 4
EXIT_DATA = 5
EXIT_USAGE = 64

SEED_ENV = "DRIVE_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # noqa: D102 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    return int(os.environ.get(SEED_ENV, "42"))


def build_parser() -> _Parser:
    parser = _Parser(prog="drivepipe", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="full live system: sim, pipeline, broker, console bridge")
    run.add_argument("--track", help="track JSON file (default: built-in stadium)")
    run.add_argument("--broker", help="external broker host:port (default: embedded)")
    run.add_argument("--worker", help="remote stylizer host:port (default: in-process mock)")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--fps", type=float, default=10.0)
    run.add_argument("--no-enhance", action="store_true", help="condition B: passthrough frames")
    run.add_argument("--console-port", type=int, default=DEFAULT_BRIDGE_PORT)
    run.add_argument("--traj-out", help="trajectory CSV path (default: session_<cond>.csv)")
    run.add_argument("--duration", type=float, default=None, help="stop after N seconds")

    bench = sub.add_parser("bench", help="drive synthetic frames and report throughput")
    bench.add_argument("--frames", type=int, default=300)
    bench.add_argument("--resolution", default="640x480")
    bench.add_argument("--stylizer", choices=("mock", "remote"), default="mock")
    bench.add_argument("--worker", help="worker host:port for --stylizer remote")
    bench.add_argument("--fps", type=float, default=12.0, help="input frame rate")
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--report", help="write JSON report here")

    replay = sub.add_parser("replay", help="run a recorded frame sequence through the pipeline")
    replay.add_argument("--manifest", required=True)
    replay.add_argument("--seed", type=int, default=None)
    replay.add_argument("--out", help="write styled frames (PPM) into this directory")
    replay.add_argument("--no-enhance", action="store_true")
    replay.add_argument(
        "--realtime",
        action="store_true",
        help="pace by manifest timestamps through the threaded pipeline "
        "(default is deterministic lockstep over every frame)",
    )
    replay.add_argument("--resolution", default="640x480")

    ev = sub.add_parser("eval", help="score trajectory sessions against a racing line")
    ev.add_argument("--sessions", required=True, help="directory of <condition>_*.csv logs")
    ev.add_argument("--racing-line", required=True, help="track JSON with racing line")
    ev.add_argument("--out", help="write report CSV here")

    sample = sub.add_parser("sample", help="uniformly subsample a frame manifest")
    sample.add_argument("--manifest", required=True)
    sample.add_argument("-k", type=int, required=True)
    sample.add_argument("--out", required=True, help="directory for sampled files")

    worker = sub.add_parser("worker-mock", help="serve the mock stylizer over the worker protocol")
    worker.add_argument("--listen", default="127.0.0.1:7073")
    return parser


def _parse_resolution(text: str) -> tuple[int, int]:
    w_text, _, h_text = text.lower().partition("x")
    return int(w_text), int(h_text)


def _parse_listen(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def cmd_run(args) -> int:
    try:
        track, line = load_track(args.track) if args.track else default_track()
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"bad track file {args.track!r}: {exc}", file=sys.stderr)
        return EXIT_TRACK

    seed = args.seed if args.seed is not None else _default_seed()
    config = PipelineConfig(
        seed=seed, target_fps=args.fps, enhancement_enabled=not args.no_enhance
    )

    broker = None
    bridge = None
    try:
        if args.broker:
            broker_addr = broker_address(args.broker)
        else:
            host, port = broker_address(None)
            try:
                broker = Broker(host, port).start()
            except OSError as exc:
                print(f"broker port unavailable: {exc}", file=sys.stderr)
                return EXIT_PORT
            broker_addr = (broker.host, broker.port)
        try:
            bridge = ConsoleBridge(broker_addr, port=args.console_port).start()
        except OSError as exc:
            print(f"console port unavailable: {exc}", file=sys.stderr)
            return EXIT_PORT

        stylizer = RemoteStylizer(args.worker) if args.worker else mock_stylize
        session = SimSession(track, line, width=config.width, height=config.height)

        pubs = {
            topic: Publisher(broker_addr, topic)
            for topic in (wire.TOPIC_RAW, wire.TOPIC_CONDITION, wire.TOPIC_STYLED, wire.TOPIC_METRICS)
        }
        sinks = Sinks(
            on_raw=lambda f: pubs[wire.TOPIC_RAW].publish(wire.MSG_FRAME, wire.encode_frame_payload(f)),
            on_condition=lambda c: pubs[wire.TOPIC_CONDITION].publish(
                wire.MSG_CONDITION, wire.encode_condition_payload(c)
            ),
            on_styled=lambda f: pubs[wire.TOPIC_STYLED].publish(
                wire.MSG_FRAME,
                wire.encode_frame_payload(
                    Frame(f.id, f.ts_ns, f.width, f.height, f.format, f.pixels, "styled")
                ),
            ),
            on_metrics=lambda m: pubs[wire.TOPIC_METRICS].publish(
                wire.MSG_METRICS, wire.encode_metrics_payload(m)
            ),
        )
        pipeline = FramePipeline(config, stylizer, sinks)
        pipeline.start()

        stop = threading.Event()

        def on_sigint(_sig, _frm):
            stop.set()

        signal.signal(signal.SIGINT, on_sigint)

        def physics_loop():
            period = 0.01
            next_t = time.monotonic()
            while not stop.is_set():
                session.tick()
                next_t += period
                delay = next_t - time.monotonic()
                if delay > 0:
                    time.sleep(delay)

        def render_loop():
            period = 1.0 / config.target_fps
            next_t = time.monotonic()
            while not stop.is_set():
                frame, _ = session.render()
                pipeline.offer_frame(frame)
                next_t += period
                delay = next_t - time.monotonic()
                if delay > 0:
                    time.sleep(delay)

        def control_loop():
            sub = Subscription(broker_addr, wire.TOPIC_CONTROL)
            try:
                while not stop.is_set():
                    env = sub.recv(timeout=0.25)
                    if env is None or env.msg_type != wire.MSG_CONTROL:
                        continue
                    update = wire.decode_control_payload(env.payload)
                    session.apply_control(
                        ControlInput(update.steer, update.throttle, update.brake)
                    )
                    pipeline.controls.enhancement_enabled = update.enhancement_enabled
                    pipeline.controls.threshold_field = update.threshold_field()
            except (ConnectionError, OSError):
                pass
            finally:
                sub.close()

        threads = [
            threading.Thread(target=physics_loop, name="sim-physics", daemon=True),
            threading.Thread(target=render_loop, name="sim-render", daemon=True),
            threading.Thread(target=control_loop, name="sim-control", daemon=True),
        ]
        for t in threads:
            t.start()

        condition = "B" if args.no_enhance else "A"
        print(
            f"running: condition {condition}, seed {seed}, broker {broker_addr[0]}:{broker_addr[1]}, "
            f"console ws://{bridge.host}:{bridge.port} (Ctrl-C to stop)"
        )
        if args.duration is not None:
            stop.wait(args.duration)
            stop.set()
        else:
            while not stop.wait(0.5):
                pass

        pipeline.stop()
        pipeline.join(5.0)
        for t in threads:
            t.join(2.0)

        traj_path = args.traj_out or f"session_{condition}.csv"
        write_trajectory(session.trajectory(), traj_path)
        print(f"trajectory written to {traj_path} ({len(session.trajectory())} samples)")
        for pub in pubs.values():
            pub.close()
        return EXIT_OK
    finally:
        if bridge is not None:
            bridge.stop()
        if broker is not None:
            broker.stop()


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------


def _probe_worker(endpoint: str) -> bool:
    try:
        with socket.create_connection(_parse_listen(endpoint), timeout=1.0):
            return True
    except OSError:
        return False


def bench_report(stats, width: int, height: int) -> dict:
    hist = stats.histogram
    if hist.total:
        p50, p95, p99 = (hist.percentile(q) for q in (0.50, 0.95, 0.99))
    else:
        p50 = p95 = p99 = 0
    return {
        "resolution": f"{width}x{height}",
        "frames_offered": stats.offered,
        "frames_emitted": stats.emitted,
        "achieved_fps": round(stats.achieved_fps(), 3),
        "drop_rate": round(stats.drop_rate(), 4),
        "p50_ms": p50 // 1_000_000,
        "p95_ms": p95 // 1_000_000,
        "p99_ms": p99 // 1_000_000,
        "max_resident_frames": stats.max_resident,
    }


def cmd_bench(args) -> int:
    width, height = _parse_resolution(args.resolution)
    seed = args.seed if args.seed is not None else _default_seed()
    if args.stylizer == "remote":
        if not args.worker or not _probe_worker(args.worker):
            print(f"remote worker unreachable: {args.worker!r}", file=sys.stderr)
            return EXIT_REMOTE
        stylizer = RemoteStylizer(args.worker)
    else:
        stylizer = mock_stylize

    if args.frames <= 0:
        report = {"resolution": args.resolution, "frames_offered": 0, "frames_emitted": 0}
        print(json.dumps(report))
        if args.report:
            with open(args.report, "w", encoding="utf-8") as fh:
                json.dump(report, fh, indent=2)
        return EXIT_OK

    config = PipelineConfig(width=width, height=height, seed=seed, target_fps=args.fps)
    source = SyntheticSource(args.frames, fps=args.fps, width=width, height=height)
    stats = run_pipeline(config, source, stylizer)
    report = bench_report(stats, width, height)
    print(json.dumps(report, indent=2))
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------


def _manifest_frames(manifest):
    for i in range(len(manifest)):
        rel, ts = manifest.entries[i]
        frame = read_ppm(manifest.resolve(i), id=i, ts_ns=ts, source_id="replay")
        yield frame


def cmd_replay(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
    except ValueError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_DATA
    width, height = _parse_resolution(args.resolution)
    seed = args.seed if args.seed is not None else _default_seed()
    config = PipelineConfig(
        width=width, height=height, seed=seed, enhancement_enabled=not args.no_enhance
    )
    if args.out:
        os.makedirs(args.out, exist_ok=True)

    digest = hashlib.sha256()
    count = 0
    if args.realtime:
        stats = run_pipeline(config, _manifest_frames(manifest))
        print(json.dumps(bench_report(stats, width, height), indent=2))
        return EXIT_OK
    for output in run_lockstep(config, _manifest_frames(manifest)):
        styled = output.styled
        digest.update(wire.encode_frame_payload(styled))
        if args.out:
            write_ppm(styled, os.path.join(args.out, f"styled_{styled.id:06d}.ppm"))
        count += 1
    print(f"frames: {count}")
    print(f"sha256: {digest.hexdigest()}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def cmd_eval(args) -> int:
    from .evaluation import make_report

    try:
        track, line = load_track(args.racing_line)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"bad racing line file {args.racing_line!r}: {exc}", file=sys.stderr)
        return EXIT_TRACK
    paths = sorted(glob.glob(os.path.join(args.sessions, "*.csv")))
    sessions = []
    for path in paths:
        name = os.path.basename(path)
        condition = name.split("_", 1)[0]
        try:
            sessions.append((condition, read_trajectory(path)))
        except ValueError as exc:
            print(f"bad session {path}: {exc}", file=sys.stderr)
            return EXIT_DATA
    if not sessions:
        print(f"no session CSVs found in {args.sessions!r}", file=sys.stderr)
        return EXIT_DATA
    try:
        report = make_report(sessions, line, track.start_line)
    except ValueError as exc:
        print(f"evaluation failed: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(report.to_table(), end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_csv())
    return EXIT_OK


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    try:
        manifest = load_manifest(args.manifest)
        sampled = sample_uniform(manifest, args.k)
    except ValueError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_DATA
    os.makedirs(args.out, exist_ok=True)
    for i in range(len(sampled)):
        rel = sampled.entries[i][0]
        dst = os.path.join(args.out, os.path.basename(rel))
        shutil.copyfile(sampled.resolve(i), dst)
    out_manifest = sampled.__class__(
        tuple((os.path.basename(rel), ts) for rel, ts in sampled.entries),
        base_dir=args.out,
    )
    save_manifest(out_manifest, os.path.join(args.out, "manifest.txt"))
    print(f"sampled {len(sampled)} of {len(manifest)} frames into {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# worker-mock
# ---------------------------------------------------------------------------


def cmd_worker_mock(args) -> int:
    host, port = _parse_listen(args.listen)
    try:
        server = WorkerServer(host, port)
    except OSError as exc:
        print(f"listen address unavailable: {exc}", file=sys.stderr)
        return EXIT_PORT
    print(f"mock worker listening on {server.address}")

    def on_sigint(_sig, _frm):
        server.stop()

    signal.signal(signal.SIGINT, on_sigint)
    server.serve_forever()
    return EXIT_OK


_COMMANDS = {
    "run": cmd_run,
    "bench": cmd_bench,
    "replay": cmd_replay,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "worker-mock": cmd_worker_mock,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
