"""Worker entry point: serve a stylizer backend over the wire protocol."""

from __future__ import annotations

import argparse
import signal
import sys

from .backends import BackendUnavailable, make_backend
from .server import WorkerServer


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="drivepipe-worker", description=__doc__)
    parser.add_argument("--listen", default="127.0.0.1:7073", help="host:port to serve on")
    parser.add_argument(
        "--backend",
        choices=("stub", "diffusion"),
        default="stub",
        help="stub = deterministic latent reference; diffusion needs model assets",
    )
    parser.add_argument("--model-dir", help="asset directory for the diffusion backend")
    parser.add_argument("--device", default="cuda")
    parser.add_argument("--prompt", default=None)
    parser.add_argument("--conditioning-scale", type=float, default=0.8)
    args = parser.parse_args(argv)

    kwargs = {}
    if args.backend == "diffusion":
        if not args.model_dir:
            parser.error("--backend diffusion requires --model-dir")
        kwargs = {
            "model_dir": args.model_dir,
            "device": args.device,
            "conditioning_scale": args.conditioning_scale,
        }
        if args.prompt is not None:
            kwargs["prompt"] = args.prompt
    try:
        backend = make_backend(args.backend, **kwargs)
    except BackendUnavailable as exc:
        print(f"{exc}", file=sys.stderr)
        return 4

    host, _, port = args.listen.rpartition(":")
    try:
        server = WorkerServer(host or "127.0.0.1", int(port), backend)
    except OSError as exc:
        print(f"listen address unavailable: {exc}", file=sys.stderr)
        return 2
    print(f"worker ({backend.name}) listening on {server.address}")
    signal.signal(signal.SIGINT, lambda *_: server.stop())
    server.serve_forever()
    return 0


if __name__ == "__main__":
    sys.exit(main())
